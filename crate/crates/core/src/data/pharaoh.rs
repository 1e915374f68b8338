//! Pharaoh alignment files: one sentence per line, links written as
//! 0-indexed `j-i` (source first). Gold files mark possible-only links as
//! `j?i`.

use std::path::Path;

use crate::error::{bail, Result};
use crate::eval::GoldAlignment;
use crate::extraction::AlignmentSet;

fn parse_token(tok: &str, line_no: usize, one_indexed: bool) -> Result<(usize, usize, bool)> {
    let (sep, sure) = if tok.contains('-') {
        ('-', true)
    } else if tok.contains('?') {
        ('?', false)
    } else {
        bail!(Format, "line {line_no}: malformed alignment token '{tok}'");
    };
    let mut parts = tok.split(sep);
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        bail!(Format, "line {line_no}: malformed alignment token '{tok}'");
    };
    let parse = |s: &str| -> Result<usize> {
        let v: usize = s
            .parse()
            .map_err(|_| crate::Error::Format(format!("line {line_no}: malformed alignment token '{tok}'")))?;
        if one_indexed {
            v.checked_sub(1)
                .ok_or_else(|| crate::Error::Format(format!("line {line_no}: index 0 in a 1-indexed file")))
        } else {
            Ok(v)
        }
    };
    Ok((parse(a)?, parse(b)?, sure))
}

/// Parses one hypothesis line. Sure and possible markers both yield links.
pub fn parse_alignment_line(line: &str, line_no: usize, one_indexed: bool) -> Result<AlignmentSet> {
    let mut links = Vec::new();
    for tok in line.split_whitespace() {
        let (j, i, _) = parse_token(tok, line_no, one_indexed)?;
        links.push((j, i));
    }
    Ok(AlignmentSet::from_links(links))
}

pub fn parse_gold_line(line: &str, line_no: usize, one_indexed: bool) -> Result<GoldAlignment> {
    let mut sure = Vec::new();
    let mut possible = Vec::new();
    for tok in line.split_whitespace() {
        let (j, i, is_sure) = parse_token(tok, line_no, one_indexed)?;
        if is_sure {
            sure.push((j, i));
        } else {
            possible.push((j, i));
        }
    }
    Ok(GoldAlignment::new(sure, possible))
}

pub fn read_alignment_file(path: &Path, one_indexed: bool) -> Result<Vec<AlignmentSet>> {
    let lines = super::read_lines(path)?;
    lines.iter().enumerate().map(|(n, l)| parse_alignment_line(l, n + 1, one_indexed)).collect()
}

pub fn read_gold_file(path: &Path, one_indexed: bool) -> Result<Vec<GoldAlignment>> {
    let lines = super::read_lines(path)?;
    lines.iter().enumerate().map(|(n, l)| parse_gold_line(l, n + 1, one_indexed)).collect()
}

pub fn write_alignment_file(path: &Path, sets: &[AlignmentSet]) -> Result<()> {
    let lines: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    super::write_lines(path, &lines)
}

pub fn write_gold_file(path: &Path, gold: &[GoldAlignment]) -> Result<()> {
    let lines: Vec<String> = gold.iter().map(|g| g.to_string()).collect();
    super::write_lines(path, &lines)
}
