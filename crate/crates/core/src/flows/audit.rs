//! Block-level invertibility audit: forward/inverse round trips and
//! log-determinant antisymmetry over random points, per block kind.

use crate::diffcore::{MlpScratch, ParamStore};
use crate::error::Result;
use crate::stream::StreamKey;

use super::block::{FlowBlock, MafBlock, SplineBlock};

#[derive(Debug, Clone)]
pub struct KindAudit {
    pub kind: &'static str,
    pub max_round_trip: f64,
    pub max_logdet_asymmetry: f64,
}

#[derive(Debug, Clone)]
pub struct RoundtripAudit {
    pub kinds: Vec<KindAudit>,
}

impl RoundtripAudit {
    pub fn worst_round_trip(&self) -> f64 {
        self.kinds.iter().map(|k| k.max_round_trip).fold(0.0, f64::max)
    }

    pub fn worst_asymmetry(&self) -> f64 {
        self.kinds
            .iter()
            .map(|k| k.max_logdet_asymmetry)
            .fold(0.0, f64::max)
    }
}

/// Round-trip every block kind over `points` random inputs with generic
/// (perturbed) parameters.
pub fn roundtrip_audit(seed: u64, points: usize) -> Result<RoundtripAudit> {
    let key = StreamKey::root(seed);
    let mut kinds = Vec::new();

    let mut maf_store = ParamStore::new();
    let maf = MafBlock::register(&mut maf_store, "audit", 3, 16);
    maf.init(&mut maf_store, key.tag("maf-init"));
    perturb(&mut maf_store, key.tag("maf-perturb"), 0.4);
    kinds.push(audit_block(
        "maf_affine",
        &FlowBlock::MafAffine(maf),
        &maf_store,
        3,
        false,
        points,
        key.tag("maf-points"),
    )?);

    kinds.push(audit_block(
        "permute",
        &FlowBlock::reversal(4),
        &ParamStore::new(),
        4,
        false,
        points,
        key.tag("perm-points"),
    )?);

    let mut spline_store = ParamStore::new();
    let spline = SplineBlock::register(&mut spline_store, "audit", 16, true);
    spline.init(&mut spline_store, key.tag("spline-init"));
    perturb(&mut spline_store, key.tag("spline-perturb"), 0.5);
    kinds.push(audit_block(
        "circular_spline",
        &FlowBlock::CircularSpline(spline),
        &spline_store,
        1,
        true,
        points,
        key.tag("spline-points"),
    )?);

    Ok(RoundtripAudit { kinds })
}

fn perturb(store: &mut ParamStore, key: StreamKey, scale: f64) {
    for (i, v) in store.values_mut().iter_mut().enumerate() {
        *v += (2.0 * key.uniform_at(i as u64) - 1.0) * scale;
    }
}

fn audit_block(
    kind: &'static str,
    block: &FlowBlock,
    store: &ParamStore,
    dim: usize,
    ring: bool,
    points: usize,
    key: StreamKey,
) -> Result<KindAudit> {
    let mut scratch = MlpScratch::default();
    let (mut y, mut back) = (Vec::new(), Vec::new());
    let mut max_rt = 0.0f64;
    let mut max_asym = 0.0f64;
    for i in 0..points {
        let x: Vec<f64> = (0..dim)
            .map(|k| {
                let u = key.u64_at((i * dim + k) as u64);
                if ring {
                    StreamKey::root(u).uniform_at(0)
                } else {
                    2.5 * StreamKey::root(u).normal_at(0)
                }
            })
            .collect();
        let ld_f = block.forward_raw(store, &x, &mut scratch, &mut y)?;
        let ld_i = block.inverse_raw(store, &y, &mut scratch, &mut back)?;
        for k in 0..dim {
            let mut d = (back[k] - x[k]).abs();
            if ring {
                d = d.min((1.0 - d).abs());
            }
            max_rt = max_rt.max(d);
        }
        max_asym = max_asym.max((ld_f + ld_i).abs());
    }
    Ok(KindAudit {
        kind,
        max_round_trip: max_rt,
        max_logdet_asymmetry: max_asym,
    })
}
