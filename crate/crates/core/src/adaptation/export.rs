use std::fmt::Write as _;

use super::adaptor::AdaptedScores;
use super::modes::PATCHED;
use crate::data::Provenance;
use crate::numerics::Real;

/// Column names of the qualitative dump: group id, provenance, `z_0..z_{d-1}`,
/// then `alpha_<pool>_<slot>` for every pool in `w1, b1, w2, b2` order.
pub fn qual_columns(dim: usize, pools: usize, slots: usize) -> Vec<String> {
    let mut cols = vec!["group_id".to_string(), "provenance".to_string()];
    cols.extend((0..dim).map(|i| format!("z_{i}")));
    for p in PATCHED.iter().take(pools) {
        cols.extend((0..slots).map(|i| format!("alpha_{p}_{i}")));
    }
    cols
}

/// One row per group with its latent `z` and pool mixing weights.
pub fn qual_tsv<T: Real>(
    rows: &[(&Provenance, &AdaptedScores<T>)],
    header: Option<&str>,
) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        for l in h.lines() {
            let _ = writeln!(out, "# {l}");
        }
    }
    let (dim, pools, slots) = rows
        .first()
        .map(|(_, s)| {
            (
                s.z.len(),
                s.alphas.len(),
                s.alphas.first().map_or(0, Vec::len),
            )
        })
        .unwrap_or((0, 0, 0));
    out.push_str(&qual_columns(dim, pools, slots).join("\t"));
    out.push('\n');
    for (i, (prov, s)) in rows.iter().enumerate() {
        let _ = write!(out, "{i}\t{prov}");
        for v in s.z.iter().chain(s.alphas.iter().flatten()) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_count() {
        let s = AdaptedScores {
            scores: vec![0.5f32; 20],
            z: vec![0.1; 4],
            alphas: vec![vec![0.5, 0.5]; 4],
        };
        let p = Provenance::Mixer {
            categories: 2,
            popularity: true,
        };
        let text = qual_tsv(&[(&p, &s)], Some("config_hash=abc"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash=abc");
        assert_eq!(lines[1].split('\t').count(), 2 + 4 + 8);
        assert_eq!(lines[2].split('\t').count(), 2 + 4 + 8);
    }
}
