//! Demonstration files: JSON Lines, one demonstration per line, with an
//! optional leading metadata line.
//!
//! ```text
//! {"version":1,"meta":{"env":"grid_multigoal","seed":7,"count":100}}
//! {"version":1,"states":[[0.0,1.0,...],...],"actions":[1,1,4],"context":[0.3,-1.2]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mhairl_core::expert::{DemoMeta, DemoSet, Demonstration};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct MetaLine {
    env: String,
    seed: u64,
    count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<MetaLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<usize>>,
}

pub fn encode_demo(d: &Demonstration) -> String {
    let line = Line {
        version: FORMAT_VERSION,
        meta: None,
        states: Some(d.states.clone()),
        actions: Some(d.actions.clone()),
        context: d.context.clone(),
        options: d.options.clone(),
    };
    serde_json::to_string(&line).expect("demonstration serializes")
}

pub fn write_demos(set: &DemoSet, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let meta = Line {
        version: FORMAT_VERSION,
        meta: Some(MetaLine { env: set.meta.env.clone(), seed: set.meta.seed, count: set.meta.count }),
        states: None,
        actions: None,
        context: None,
        options: None,
    };
    let head = serde_json::to_string(&meta).expect("metadata serializes");
    writeln!(w, "{head}").map_err(|e| Error::io(path, e))?;
    for d in &set.demos {
        writeln!(w, "{}", encode_demo(d)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_demos(path: &Path) -> Result<DemoSet> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_demos(BufReader::new(f), path)
}

/// Parses demonstration lines; `path` is only used in error messages.
pub fn parse_demos(reader: impl BufRead, path: &Path) -> Result<DemoSet> {
    let mut demos = Vec::new();
    let mut meta = None;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: n, msg };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(FORMAT_VERSION) => {}
            Some(found) => {
                return Err(Error::Version { path: path.to_path_buf(), line: n, found, expected: FORMAT_VERSION })
            }
            None => return Err(err("missing or non-integer `version`".into())),
        }
        let parsed: Line = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        if let Some(m) = parsed.meta {
            if meta.is_some() || !demos.is_empty() {
                return Err(err("metadata line must come first".into()));
            }
            meta = Some(DemoMeta { env: m.env, seed: m.seed, count: m.count });
            continue;
        }
        let (Some(states), Some(actions)) = (parsed.states, parsed.actions) else {
            return Err(err("demonstration needs `states` and `actions`".into()));
        };
        let d = Demonstration { states, actions, context: parsed.context, options: parsed.options };
        d.validate().map_err(|e| err(e.to_string()))?;
        demos.push(d);
    }
    if demos.is_empty() {
        return Err(Error::Parse { path: path.to_path_buf(), line: 0, msg: "no demonstrations".into() });
    }
    let meta = meta.unwrap_or(DemoMeta { env: String::new(), seed: 0, count: demos.len() });
    Ok(DemoSet { demos, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mhairl_core::env::TaskSpec;
    use mhairl_core::expert::generate_dataset;

    fn parse(text: &str) -> Result<DemoSet> {
        parse_demos(text.as_bytes(), Path::new("d.jsonl"))
    }

    #[test]
    fn header_is_optional() {
        let set = parse("{\"version\":1,\"states\":[[1.0,0.0],[0.0,1.0]],\"actions\":[1]}\n").unwrap();
        assert_eq!(set.demos.len(), 1);
        assert_eq!(set.meta.count, 1);
    }

    #[test]
    fn encoded_line_round_trips() {
        let set = generate_dataset(&TaskSpec::tinychain(), 2, 1, true).unwrap();
        let text: String = set.demos.iter().map(|d| encode_demo(d) + "\n").collect();
        assert_eq!(parse(&text).unwrap().demos, set.demos);
    }

    #[test]
    fn unknown_fields_rejected() {
        let e = parse("{\"version\":1,\"states\":[[1.0]],\"actions\":[],\"reward\":3}").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
    }
}
