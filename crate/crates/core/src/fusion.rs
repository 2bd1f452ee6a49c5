//! Late fusion: softmax weights over member validation F1 and convex averaging of the
//! members' probability vectors.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::data::Modality;
use crate::error::{shape_err, Error, Result};

pub fn softmax_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Arity("fusion needs at least one member".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input(format!("non-finite fusion score in {scores:?}")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// `P[i] = sum_m w_m * P_m[i]`.
pub fn fuse(members: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if members.len() != weights.len() {
        return Err(shape_err("fusion members vs weights", weights.len(), members.len()));
    }
    let Some(k) = members.first().map(Vec::len) else {
        return Err(Error::Arity("fusion needs at least one member".into()));
    };
    if let Some(bad) = members.iter().find(|m| m.len() != k) {
        return Err(shape_err("fusion member probabilities", k, bad.len()));
    }
    Ok((0..k)
        .map(|i| members.iter().zip(weights).map(|(m, w)| w * m[i]).sum())
        .collect())
}

/// All non-empty subsets, by size and then lexically by the sorted member names.
pub fn enumerate_combinations(modalities: &[Modality]) -> Result<Vec<Vec<Modality>>> {
    let mut sorted = modalities.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Input(format!("duplicate modality in {modalities:?}")));
    }
    if sorted.len() > 16 {
        return Err(Error::Input("too many modalities".into()));
    }
    let mut out: Vec<Vec<Modality>> = (1u32..1 << sorted.len())
        .map(|mask| {
            sorted
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &m)| m)
                .collect()
        })
        .collect();
    out.sort_by(|a, b| {
        a.len()
            .cmp(&b.len())
            .then_with(|| a.iter().map(|m| m.as_str()).cmp(b.iter().map(|m| m.as_str())))
    });
    Ok(out)
}

/// `camera_only` for a single member, `camera_radar` for two, and so on.
pub fn combination_name(members: &[Modality]) -> String {
    let mut sorted = members.to_vec();
    sorted.sort();
    match sorted.as_slice() {
        [m] => format!("{m}_only"),
        ms => ms.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("_"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionMember {
    pub modality: Modality,
    pub checkpoint: PathBuf,
    /// Mean validation F1 over horizons.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionEnsemble {
    members: Vec<FusionMember>,
    weights: Vec<f64>,
}

impl FusionEnsemble {
    pub fn new(members: Vec<FusionMember>) -> Result<Self> {
        if let Some(m) = members.iter().find(|m| !(0.0..=1.0).contains(&m.score)) {
            return Err(Error::Range(format!("{} score {} outside [0, 1]", m.modality, m.score)));
        }
        let scores: Vec<f64> = members.iter().map(|m| m.score).collect();
        let weights = softmax_weights(&scores)?;
        let tags: Vec<Modality> = members.iter().map(|m| m.modality).collect();
        enumerate_combinations(&tags)?;
        Ok(FusionEnsemble { members, weights })
    }

    pub fn members(&self) -> &[FusionMember] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn name(&self) -> String {
        combination_name(&self.members.iter().map(|m| m.modality).collect::<Vec<_>>())
    }

    /// Fuses one window's member outputs, given in member order.
    pub fn fuse(&self, member_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
        fuse(member_probs, &self.weights)
    }

    /// One `modality<TAB>checkpoint<TAB>score<TAB>weight` line per member after a header.
    pub fn write_manifest<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "modality\tcheckpoint\tval_f1\tweight")?;
        for (m, wt) in self.members.iter().zip(&self.weights) {
            writeln!(w, "{}\t{}\t{:?}\t{:?}", m.modality, m.checkpoint.display(), m.score, wt)?;
        }
        Ok(())
    }

    /// Rebuilds the ensemble; weights are recomputed from the scores and must agree
    /// with the stored ones.
    pub fn read_manifest<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        match lines.next().transpose()? {
            Some(h) if h == "modality\tcheckpoint\tval_f1\tweight" => {}
            other => return Err(Error::Data(format!("bad manifest header {other:?}"))),
        }
        let mut members = Vec::new();
        let mut stored = Vec::new();
        for line in lines {
            let line = line?;
            let cols: Vec<&str> = line.split('\t').collect();
            let [m, path, score, weight] = cols[..] else {
                return Err(Error::Data(format!("bad manifest line `{line}`")));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Data(format!("bad number `{s}`")));
            members.push(FusionMember {
                modality: m.parse()?,
                checkpoint: PathBuf::from(path),
                score: num(score)?,
            });
            stored.push(num(weight)?);
        }
        let ensemble = FusionEnsemble::new(members)?;
        if ensemble.weights != stored {
            return Err(Error::Data("manifest weights disagree with scores".into()));
        }
        Ok(ensemble)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::binfmt::save(path, |w| self.write_manifest(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::binfmt::load(path, |r| Self::read_manifest(r))
    }
}
