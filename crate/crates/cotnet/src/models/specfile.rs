//! Plain-text model description files.
//!
//! The format is line oriented. Blank lines and lines starting with `#`
//! are ignored. Every other line starts with a keyword:
//!
//! ```text
//! model cotnet50
//! classes 1000
//! stem 64
//! cardinality 1
//! stage res2 blocks=3 width=64 out=256 unit=cot
//! stage res3 blocks=4 width=128 out=512 unit=cot
//! stage res4 blocks=6 width=256 out=1024 unit=cot
//! stage res5 blocks=3 width=512 out=2048 unit=cot
//! cot kernel=3 share=8 reduction=4 fusion_reduction=2 fusion_floor=32 softmax=on mode=full
//! ```
//!
//! `model` and all four `stage` lines are required. `classes` (default
//! 1000), `stem` (default 64), `cardinality` (default 1) and `cot`
//! (defaults shown above) may be omitted. `unit` is `conv` or `cot`,
//! `softmax` is `on` or `off`, and `mode` is one of `full`,
//! `static_only`, `dynamic_only`, `linear_fusion`. Duplicate or unknown
//! keys are errors. [`export_spec`] emits the canonical form, and
//! `parse_spec(export_spec(s))` reproduces `s` exactly.

use crate::cot::CotMode;
use crate::error::{Error, Result};
use crate::models::{CotTemplate, ModelSpec, StageSpec, UnitKind, STAGE_NAMES};

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::SpecParse { line, detail: detail.into() }
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("{key} expects an unsigned integer, got '{value}'")))
}

/// Split `blocks=3 width=64 ...` into (key, value) pairs.
fn key_values<'a>(line: usize, tokens: &[&'a str]) -> Result<Vec<(&'a str, &'a str)>> {
    tokens
        .iter()
        .map(|tok| {
            tok.split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected key=value, got '{tok}'")))
        })
        .collect()
}

fn parse_stage(line: usize, tokens: &[&str]) -> Result<(usize, StageSpec)> {
    let stage_name = tokens
        .first()
        .ok_or_else(|| parse_err(line, "stage line needs a stage name"))?;
    let index = STAGE_NAMES
        .iter()
        .position(|n| n == stage_name)
        .ok_or_else(|| parse_err(line, format!("unknown stage '{stage_name}'")))?;
    let mut blocks = None;
    let mut width = None;
    let mut out = None;
    let mut kind = None;
    for (key, value) in key_values(line, &tokens[1..])? {
        match key {
            "blocks" => blocks = Some(parse_usize(line, key, value)?),
            "width" => width = Some(parse_usize(line, key, value)?),
            "out" => out = Some(parse_usize(line, key, value)?),
            "unit" => {
                kind = Some(match value {
                    "conv" => UnitKind::Conv,
                    "cot" => UnitKind::Cot,
                    other => {
                        return Err(parse_err(line, format!("unknown unit '{other}'")));
                    }
                })
            }
            other => return Err(parse_err(line, format!("unknown stage key '{other}'"))),
        }
    }
    let missing = |what: &str| parse_err(line, format!("stage {stage_name} is missing {what}"));
    Ok((
        index,
        StageSpec {
            blocks: blocks.ok_or_else(|| missing("blocks"))?,
            width: width.ok_or_else(|| missing("width"))?,
            out: out.ok_or_else(|| missing("out"))?,
            kind: kind.ok_or_else(|| missing("unit"))?,
        },
    ))
}

fn parse_cot(line: usize, tokens: &[&str]) -> Result<CotTemplate> {
    let mut cot = CotTemplate::default();
    for (key, value) in key_values(line, tokens)? {
        match key {
            "kernel" => cot.kernel = parse_usize(line, key, value)?,
            "share" => cot.share = parse_usize(line, key, value)?,
            "reduction" => cot.reduction = parse_usize(line, key, value)?,
            "fusion_reduction" => cot.fusion_reduction = parse_usize(line, key, value)?,
            "fusion_floor" => cot.fusion_floor = parse_usize(line, key, value)?,
            "softmax" => {
                cot.softmax_attn = match value {
                    "on" => true,
                    "off" => false,
                    other => {
                        return Err(parse_err(line, format!("softmax expects on|off, got '{other}'")))
                    }
                }
            }
            "mode" => {
                cot.mode = CotMode::parse(value)
                    .map_err(|_| parse_err(line, format!("unknown mode '{value}'")))?
            }
            other => return Err(parse_err(line, format!("unknown cot key '{other}'"))),
        }
    }
    Ok(cot)
}

/// Parse a model description. The result is validated.
pub fn parse_spec(text: &str) -> Result<ModelSpec> {
    let mut name: Option<String> = None;
    let mut classes = 1000usize;
    let mut stem = 64usize;
    let mut cardinality = 1usize;
    let mut stage_slots: [Option<StageSpec>; 4] = [None; 4];
    let mut cot: Option<CotTemplate> = None;
    let mut seen_scalar: Vec<&str> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let keyword = tokens[0];
        let scalar = |seen: &mut Vec<&str>| -> Result<()> {
            if seen.contains(&keyword) {
                return Err(parse_err(line_no, format!("duplicate '{keyword}' line")));
            }
            Ok(())
        };
        match keyword {
            "model" => {
                scalar(&mut seen_scalar)?;
                seen_scalar.push("model");
                let value = tokens
                    .get(1)
                    .ok_or_else(|| parse_err(line_no, "model line needs a name"))?;
                if tokens.len() > 2 {
                    return Err(parse_err(line_no, "model line takes a single name"));
                }
                name = Some((*value).into());
            }
            "classes" | "stem" | "cardinality" => {
                scalar(&mut seen_scalar)?;
                seen_scalar.push(keyword);
                let value = tokens
                    .get(1)
                    .ok_or_else(|| parse_err(line_no, format!("{keyword} line needs a value")))?;
                if tokens.len() > 2 {
                    return Err(parse_err(line_no, format!("{keyword} line takes one value")));
                }
                let v = parse_usize(line_no, keyword, value)?;
                match keyword {
                    "classes" => classes = v,
                    "stem" => stem = v,
                    _ => cardinality = v,
                }
            }
            "stage" => {
                let (index, st) = parse_stage(line_no, &tokens[1..])?;
                if stage_slots[index].is_some() {
                    return Err(parse_err(
                        line_no,
                        format!("duplicate stage '{}'", STAGE_NAMES[index]),
                    ));
                }
                stage_slots[index] = Some(st);
            }
            "cot" => {
                if cot.is_some() {
                    return Err(parse_err(line_no, "duplicate 'cot' line"));
                }
                cot = Some(parse_cot(line_no, &tokens[1..])?);
            }
            other => return Err(parse_err(line_no, format!("unknown keyword '{other}'"))),
        }
    }

    let name = name.ok_or_else(|| parse_err(text.lines().count(), "missing 'model' line"))?;
    let mut stages = Vec::with_capacity(4);
    for (i, slot) in stage_slots.into_iter().enumerate() {
        stages.push(slot.ok_or_else(|| {
            parse_err(text.lines().count(), format!("missing stage '{}'", STAGE_NAMES[i]))
        })?);
    }
    let spec = ModelSpec {
        name,
        classes,
        stem_width: stem,
        cardinality,
        stages: [stages[0], stages[1], stages[2], stages[3]],
        cot: cot.unwrap_or_default(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Canonical text form of a spec; see the module docs for the grammar.
pub fn export_spec(spec: &ModelSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("model {}\n", spec.name));
    out.push_str(&format!("classes {}\n", spec.classes));
    out.push_str(&format!("stem {}\n", spec.stem_width));
    out.push_str(&format!("cardinality {}\n", spec.cardinality));
    for (i, st) in spec.stages.iter().enumerate() {
        out.push_str(&format!(
            "stage {} blocks={} width={} out={} unit={}\n",
            STAGE_NAMES[i],
            st.blocks,
            st.width,
            st.out,
            st.kind.name()
        ));
    }
    let c = &spec.cot;
    out.push_str(&format!(
        "cot kernel={} share={} reduction={} fusion_reduction={} fusion_floor={} softmax={} mode={}\n",
        c.kernel,
        c.share,
        c.reduction,
        c.fusion_reduction,
        c.fusion_floor,
        if c.softmax_attn { "on" } else { "off" },
        c.mode.name()
    ));
    out
}
