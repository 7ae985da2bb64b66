use std::io::{Read, Write};

use super::dialogue::DialogueRecord;
use super::emotion::Emotion;
use crate::error::{Error, Result};

fn clean(text: &str) -> String {
    text.replace("_comma_", ",")
}

/// Converts EmpatheticDialogues CSV (`conv_id, utterance_idx, context,
/// prompt, ..., utterance`) to dialogue records. Each listener turn (even
/// `utterance_idx`) becomes one record whose context is the preceding turns.
pub fn convert_ed_csv<R: Read>(input: R) -> Result<Vec<DialogueRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("csv header: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("csv is missing column {name:?}")))
    };
    let (conv, idx, emo, prompt, utt) = (
        col("conv_id")?,
        col("utterance_idx")?,
        col("context")?,
        col("prompt")?,
        col("utterance")?,
    );

    let mut out = Vec::new();
    let mut current: Option<String> = None;
    let mut turns: Vec<String> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Data(format!("csv line {line}: {e}")))?;
        let field = |c: usize| {
            row.get(c)
                .ok_or_else(|| Error::Data(format!("csv line {line}: missing field {c}")))
        };
        let conv_id = field(conv)?;
        if current.as_deref() != Some(conv_id) {
            current = Some(conv_id.to_string());
            turns.clear();
        }
        let turn: usize = field(idx)?
            .trim()
            .parse()
            .map_err(|e| Error::Data(format!("csv line {line}: utterance_idx: {e}")))?;
        let emotion: Emotion = field(emo)?
            .parse()
            .map_err(|e: super::emotion::UnknownEmotion| Error::Data(format!("csv line {line}: {e}")))?;
        let text = clean(field(utt)?);
        if turn.is_multiple_of(2) && !turns.is_empty() {
            out.push(DialogueRecord {
                context: turns.clone(),
                target: text.clone(),
                emotion: emotion.label().to_string(),
                situation: Some(clean(field(prompt)?)),
                inference: None,
            });
        }
        turns.push(text);
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[DialogueRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "conv_id,utterance_idx,context,prompt,speaker_idx,utterance,selfeval,tags
hit:0_conv:1,1,sentimental,I remember going_comma_ fun,1,I remember going to see the fireworks.,5|5|5_2|2|5,
hit:0_conv:1,2,sentimental,I remember going_comma_ fun,0,Was this a friend you were in love with?,5|5|5_2|2|5,
hit:0_conv:1,3,sentimental,I remember going_comma_ fun,1,This was a best friend.,5|5|5_2|2|5,
hit:0_conv:1,4,sentimental,I remember going_comma_ fun,0,Where has she gone?,5|5|5_2|2|5,
hit:1_conv:2,1,afraid,scary night,2,it was dark_comma_ so dark,,
hit:1_conv:2,2,afraid,scary night,3,oh no,,
";

    #[test]
    fn emits_listener_turns() {
        let recs = convert_ed_csv(CSV.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].context, vec!["I remember going to see the fireworks."]);
        assert_eq!(recs[1].context.len(), 3);
        assert_eq!(recs[1].target, "Where has she gone?");
        assert_eq!(recs[2].context, vec!["it was dark, so dark"]);
        assert_eq!(recs[2].emotion, "afraid");
        assert_eq!(recs[0].situation.as_deref(), Some("I remember going, fun"));
    }
}
