//! Minimal dense-tensor kernel with reverse-mode differentiation.
//!
//! Everything runs on `f64` on one thread, so forward passes are
//! bit-reproducible and finite-difference checks can be tight.
//!
//! ```
//! use empathy_nn::{Graph, ParameterStore, Tensor};
//!
//! let mut store = ParameterStore::new();
//! store.register("w", Tensor::new(&[2, 1], vec![0.5, -1.0]).unwrap()).unwrap();
//! let g = Graph::new(&store);
//! let x = g.constant(Tensor::new(&[1, 2], vec![2.0, 3.0]).unwrap());
//! let loss = x.matmul(g.param("w").unwrap()).unwrap().sum();
//! assert_eq!(loss.item(), -2.0);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get("w").unwrap().data(), &[2.0, 3.0]);
//! ```

mod error;
mod graph;
mod gradcheck;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var, LOG_EPS};
pub use optim::{NoamSchedule, OptimizerState};
pub use params::{Parameter, ParameterStore};
pub use tensor::Tensor;
