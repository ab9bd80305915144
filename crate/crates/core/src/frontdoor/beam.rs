use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Simple path rooted at the claim node with its summed log transition
/// probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ReasoningPath {
    pub nodes: Vec<usize>,
    pub log_score: f64,
}

/// Higher score first, then lexicographic node order.
fn rank(a: &ReasoningPath, b: &ReasoningPath) -> Ordering {
    b.log_score
        .total_cmp(&a.log_score)
        .then_with(|| a.nodes.cmp(&b.nodes))
}

fn successors<'a>(p: &'a [Vec<f64>], path: &'a [usize]) -> impl Iterator<Item = (usize, f64)> + 'a {
    let cur = *path.last().expect("paths are never empty");
    p[cur]
        .iter()
        .enumerate()
        .filter(move |&(j, &w)| w > 0.0 && !path.contains(&j))
        .map(|(j, &w)| (j, w.ln()))
}

fn check(p: &[Vec<f64>], max_len: usize) -> Result<()> {
    if max_len < 2 {
        return Err(Error::invalid("beam_search", format!("max_len must be >= 2, got {max_len}")));
    }
    if p.is_empty() || p.iter().any(|r| r.len() != p.len()) {
        return Err(Error::invalid("beam_search", "transition matrix must be square and non-empty"));
    }
    Ok(())
}

/// Beam search from node 0. A path is complete when it reaches `max_len`
/// nodes or has no unvisited successor with positive probability; only
/// complete paths are returned.
pub fn beam_search_paths(p: &[Vec<f64>], max_len: usize, beam: usize) -> Result<Vec<ReasoningPath>> {
    check(p, max_len)?;
    if beam == 0 {
        return Err(Error::invalid("beam_search", "beam must be >= 1"));
    }
    let mut frontier = vec![ReasoningPath {
        nodes: vec![0],
        log_score: 0.0,
    }];
    let mut done = Vec::new();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for path in &frontier {
            let mut extended = false;
            for (j, lp) in successors(p, &path.nodes) {
                extended = true;
                let mut nodes = path.nodes.clone();
                nodes.push(j);
                let cand = ReasoningPath {
                    nodes,
                    log_score: path.log_score + lp,
                };
                if cand.nodes.len() >= max_len {
                    done.push(cand);
                } else {
                    next.push(cand);
                }
            }
            if !extended && path.nodes.len() > 1 {
                done.push(path.clone());
            }
        }
        next.sort_by(rank);
        next.truncate(beam);
        frontier = next;
    }
    done.sort_by(rank);
    done.truncate(beam);
    Ok(done)
}

/// Every complete simple path, best first. Exponential; meant as an oracle.
pub fn enumerate_paths(p: &[Vec<f64>], max_len: usize) -> Result<Vec<ReasoningPath>> {
    check(p, max_len)?;
    fn walk(p: &[Vec<f64>], max_len: usize, path: &mut Vec<usize>, score: f64, out: &mut Vec<ReasoningPath>) {
        let succ: Vec<(usize, f64)> = successors(p, path).collect();
        if path.len() >= max_len || (succ.is_empty() && path.len() > 1) {
            out.push(ReasoningPath {
                nodes: path.clone(),
                log_score: score,
            });
            return;
        }
        for (j, lp) in succ {
            path.push(j);
            walk(p, max_len, path, score + lp, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    walk(p, max_len, &mut vec![0], 0.0, &mut out);
    out.sort_by(rank);
    Ok(out)
}
