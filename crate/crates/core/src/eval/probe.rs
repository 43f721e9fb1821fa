use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::QuestionInstance;
use crate::error::{Error, Result};
use crate::geo::{manhattan_km, Catalog, Entity};
use crate::spatial::SpatialModel;

/// One (candidate, mention) distance weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub qid: String,
    pub candidate_id: String,
    pub mention: String,
    pub distance_km: f64,
    pub weight: f64,
}

/// Distance weights at every mention start, per candidate.
pub fn probe_weights(
    model: &SpatialModel,
    q: &QuestionInstance,
    candidates: &[&Entity],
    catalog: &Catalog,
) -> Result<Vec<ProbeRecord>> {
    let prep = model.prepare(q, catalog)?;
    let mut out = Vec::with_capacity(candidates.len() * q.mentions.len());
    for c in candidates {
        if c.city_id != q.city_id {
            return Err(Error::Config(format!(
                "candidate {} is not in city {}",
                c.id, q.city_id
            )));
        }
        let weights = model.mention_weights(&prep, c.location)?;
        for ((m, pm), w) in q.mentions.iter().zip(&prep.mentions).zip(weights) {
            out.push(ProbeRecord {
                qid: q.qid.clone(),
                candidate_id: c.id.clone(),
                mention: q.mention_text(m),
                distance_km: manhattan_km(&c.location, &pm.point),
                weight: w,
            });
        }
    }
    Ok(out)
}

/// CSV with header `qid,candidate_id,mention,distance_km,weight`.
pub fn write_probe_csv(records: &[ProbeRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Config(format!("writing probe csv: {e}"));
    if records.is_empty() {
        w.write_record(["qid", "candidate_id", "mention", "distance_km", "weight"])
            .map_err(wrap)?;
    }
    for r in records {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush()
        .map_err(|e| Error::Config(format!("writing probe csv: {e}")))
}
