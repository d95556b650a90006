//! Planetoid-style raw citation files.
//!
//! `<name>.content`: `<id> <feature_1> ... <feature_d> <label>` per line.
//! `<name>.cites`:   `<cited> <citing>` per line (direction is discarded).
//! Tokens may be separated by tabs or spaces.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::warn;

use super::GraphDataset;
use crate::error::{G5Error, Result};
use crate::tensor::Tensor;

pub fn load_citation_graph(
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
    graph_id: &str,
) -> Result<GraphDataset> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();
    let content = fs::read_to_string(content_path).map_err(|e| G5Error::io(content_path, e))?;
    let cites = fs::read_to_string(cites_path).map_err(|e| G5Error::io(cites_path, e))?;
    parse_citation_graph(&content, &cites, graph_id, content_path, cites_path)
}

/// Parse already-read file contents; paths are only used in error messages.
pub fn parse_citation_graph(
    content: &str,
    cites: &str,
    graph_id: &str,
    content_path: &Path,
    cites_path: &Path,
) -> Result<GraphDataset> {
    let parse_err = |path: &Path, line: usize, msg: String| G5Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut node_ids = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_err(
                content_path,
                lineno + 1,
                format!("expected id, features and label, found {} tokens", tokens.len()),
            ));
        }
        let d = tokens.len() - 2;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(parse_err(
                    content_path,
                    lineno + 1,
                    format!("{d} features, previous lines have {w}"),
                ))
            }
            _ => {}
        }
        for tok in &tokens[1..=d] {
            let v: f64 = tok.parse().map_err(|_| {
                parse_err(content_path, lineno + 1, format!("bad feature value '{tok}'"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(content_path, lineno + 1, format!("non-finite feature '{tok}'")));
            }
            rows.push(v);
        }
        node_ids.push(tokens[0].to_string());
        raw_labels.push(tokens[d + 1].to_string());
    }
    if node_ids.is_empty() {
        return Err(G5Error::EmptyDataset(content_path.to_path_buf()));
    }

    let class_names: Vec<String> = raw_labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = raw_labels
        .iter()
        .map(|l| Some(class_names.binary_search(l).expect("label collected above")))
        .collect();
    let n = node_ids.len();
    let features = Tensor::new(vec![n, width.unwrap_or(0)], rows)?;

    let mut index = std::collections::HashMap::with_capacity(n);
    for (i, id) in node_ids.iter().enumerate() {
        if index.insert(id.as_str(), i).is_some() {
            return Err(parse_err(content_path, i + 1, format!("duplicate node id '{id}'")));
        }
    }
    let mut edges = Vec::new();
    let mut dropped = 0usize;
    let mut any_line = false;
    for (lineno, line) in cites.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        any_line = true;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(parse_err(
                cites_path,
                lineno + 1,
                format!("expected two node ids, found {} tokens", tokens.len()),
            ));
        }
        match (index.get(tokens[0]), index.get(tokens[1])) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => dropped += 1,
        }
    }
    if !any_line {
        return Err(G5Error::EmptyDataset(cites_path.to_path_buf()));
    }
    if dropped > 0 {
        warn!("graph '{graph_id}': dropped {dropped} links with unknown endpoints");
    }

    let mut ds = GraphDataset::new(graph_id, node_ids, features, labels, class_names, edges)?;
    ds.set_dropped_edges(dropped);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(content: &str, cites: &str) -> Result<GraphDataset> {
        parse_citation_graph(content, cites, "t", Path::new("t.content"), Path::new("t.cites"))
    }

    #[test]
    fn three_node_file() {
        let g = parse(
            "p1\t1\t0\tA\np2 0 1 B\np3\t1\t1\tA\n",
            "p1\tp2\np3 p2\n",
        )
        .unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.num_classes(), 2);
        assert_eq!(g.feature_dim(), 2);
        assert_eq!(g.labels().unwrap(), &[Some(0), Some(1), Some(0)]);
    }

    #[test]
    fn unknown_endpoints_counted_and_dropped() {
        let g = parse("a 1 X\nb 0 Y\n", "a b\na zzz\nqqq b\n").unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.dropped_edges(), 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("a 1 0 X\nb 1 Y\n", "a b\n").unwrap_err();
        match err {
            G5Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("a 1 X\nb 0 Y\n", "a b\na\n").unwrap_err();
        assert!(matches!(err, G5Error::Parse { line: 2, .. }));
        let err = parse("a one X\n", "a a\n").unwrap_err();
        assert!(matches!(err, G5Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_an_empty_dataset() {
        assert!(matches!(parse("\n\n", "a b\n"), Err(G5Error::EmptyDataset(_))));
        assert!(matches!(parse("a 1 X\n", ""), Err(G5Error::EmptyDataset(_))));
    }
}
