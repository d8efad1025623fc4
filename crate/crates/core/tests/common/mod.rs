//! Shared helpers for integration tests: an independent evaluator used as an
//! oracle, plus random network and platform generators.
#![allow(dead_code)]

use std::path::PathBuf;

use foldmap::backends::{BackendDescriptor, BackendKind, ResourceVector};
use foldmap::evaluation::Platform;
use foldmap::network::{LayerKind, LayerSpec, NetworkModel};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn platform(dsp: u64, bram: u64, bandwidth: f64, t_conf: f64) -> Platform {
    Platform {
        name: "test".into(),
        resources: ResourceVector::new(dsp, bram, 10_000_000, 10_000_000),
        mem_bandwidth_bytes_per_s: bandwidth,
        reconfig_time_s: t_conf,
        clock_hz: 100e6,
    }
}

pub fn naive_divisors(n: u32) -> Vec<u32> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Straight-from-the-definition evaluation of one folded layer.
pub mod oracle {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Fold {
        pub s_in: u32,
        pub s_out: u32,
        pub k: u32,
    }

    fn kernel(l: &LayerSpec) -> u64 {
        u64::from(l.kernel_rows) * u64::from(l.kernel_cols)
    }

    pub fn cycles(l: &LayerSpec, f: Fold) -> u64 {
        let ci = u64::from(l.channels_in) / u64::from(f.s_in);
        let co = u64::from(l.channels_out) / u64::from(f.s_out);
        let px = u64::from(l.rows_out) * u64::from(l.cols_out);
        match l.kind {
            LayerKind::Convolution => px * ci * co * (kernel(l) / u64::from(f.k)),
            LayerKind::Dense => ci * co,
            _ => px * ci,
        }
    }

    fn div_ceil(a: u64, b: u64) -> u64 {
        (a + b - 1) / b
    }

    /// (dsp, bram, lut, ff)
    pub fn resources(l: &LayerSpec, f: Fold) -> [u64; 4] {
        let weighted = matches!(l.kind, LayerKind::Convolution | LayerKind::Dense);
        let par = u64::from(f.s_in) * u64::from(f.s_out) * u64::from(f.k);
        let dsp = if weighted { par } else { 0 };
        let mut bram = 0;
        if weighted {
            let bits = u64::from(l.weight_bits)
                * u64::from(l.channels_in)
                * u64::from(l.channels_out)
                * kernel(l);
            bram += par.max(div_ceil(bits, 18_432));
        }
        if l.kind == LayerKind::Convolution {
            let row = u64::from(l.cols_in) * u64::from(l.channels_in) * u64::from(l.activation_bits);
            bram += u64::from(l.kernel_rows - 1) * div_ceil(row, 18_432);
        }
        let lut = 300 + 50 * (u64::from(f.s_in) + u64::from(f.s_out)) + 10 * dsp;
        [dsp, bram, lut, lut / 2]
    }

    pub fn options(l: &LayerSpec, b: &BackendDescriptor) -> Vec<Fold> {
        let tied = b.enforce_intra_matching
            && matches!(l.kind, LayerKind::Pooling | LayerKind::ReLU | LayerKind::GlobalPooling);
        let ks = if l.kind == LayerKind::Convolution {
            naive_divisors(l.kernel_rows * l.kernel_cols)
        } else {
            vec![1]
        };
        let mut out = Vec::new();
        for &s_in in &naive_divisors(l.channels_in) {
            for &s_out in &naive_divisors(l.channels_out) {
                if tied && s_in != s_out {
                    continue;
                }
                for &k in &ks {
                    out.push(Fold { s_in, s_out, k });
                }
            }
        }
        out
    }

    pub struct Outcome {
        pub best: Option<f64>,
        pub points: u64,
    }

    fn bytes(elements: u64, bits: u32) -> f64 {
        (elements * u64::from(bits)) as f64 / 8.0
    }

    /// Value of one complete assignment, or None when a constraint fails.
    pub fn value(
        model: &NetworkModel,
        b: &BackendDescriptor,
        p: &Platform,
        batch: Option<u64>,
        cuts_after: &[bool],
        folds: &[Fold],
    ) -> Option<f64> {
        let n = model.layers.len();
        let mut groups: Vec<Vec<usize>> = vec![vec![0]];
        for i in 1..n {
            if cuts_after[i - 1] {
                groups.push(vec![i]);
            } else {
                groups.last_mut().unwrap().push(i);
                if b.enforce_inter_matching && folds[i - 1].s_out != folds[i].s_in {
                    return None;
                }
            }
        }
        let mut total = 0.0;
        for g in &groups {
            let mut used = [0u64; 4];
            let mut t: f64 = 0.0;
            for &i in g {
                let r = resources(&model.layers[i], folds[i]);
                for j in 0..4 {
                    used[j] += r[j];
                }
                t = t.max(cycles(&model.layers[i], folds[i]) as f64 / p.clock_hz);
            }
            let lim = [p.resources.dsp, p.resources.bram, p.resources.lut, p.resources.ff];
            if (0..4).any(|j| used[j] > lim[j]) {
                return None;
            }
            let first = &model.layers[g[0]];
            let last = &model.layers[*g.last().unwrap()];
            let d_in = bytes(
                u64::from(first.rows_in) * u64::from(first.cols_in) * u64::from(first.channels_in),
                first.activation_bits,
            );
            let d_out = bytes(
                u64::from(last.rows_out) * u64::from(last.cols_out) * u64::from(last.channels_out),
                last.activation_bits,
            );
            if (d_in + d_out) / t >= p.mem_bandwidth_bytes_per_s {
                return None;
            }
            total += t;
        }
        let c = (groups.len() - 1) as f64;
        Some(match batch {
            None => total + c * p.reconfig_time_s,
            Some(bs) => -(bs as f64) / (bs as f64 * total + c * p.reconfig_time_s),
        })
    }

    /// Enumerate every cut set and folding; report the best feasible value and
    /// the number of points visited.
    pub fn exhaustive(model: &NetworkModel, b: &BackendDescriptor, p: &Platform, batch: Option<u64>) -> Outcome {
        let n = model.layers.len();
        let opts: Vec<Vec<Fold>> = model.layers.iter().map(|l| options(l, b)).collect();
        let mut best: Option<f64> = None;
        let mut points = 0u64;
        let mut folds = vec![opts[0][0]; n];
        for mask in 0..(1u64 << (n - 1)) {
            let cuts: Vec<bool> = (0..n.saturating_sub(1)).map(|e| mask >> e & 1 == 1).collect();
            let mut idx = vec![0usize; n];
            loop {
                for i in 0..n {
                    folds[i] = opts[i][idx[i]];
                }
                points += 1;
                if let Some(v) = value(model, b, p, batch, &cuts, &folds) {
                    if best.is_none_or(|x| v < x) {
                        best = Some(v);
                    }
                }
                let mut i = 0;
                while i < n {
                    idx[i] += 1;
                    if idx[i] < opts[i].len() {
                        break;
                    }
                    idx[i] = 0;
                    i += 1;
                }
                if i == n {
                    break;
                }
            }
        }
        Outcome { best, points }
    }
}

fn layer(name: String, kind: LayerKind, c_in: u32, c_out: u32, rows: u32, kernel: u32, stride: u32) -> LayerSpec {
    let (rows_out, k) = match kind {
        LayerKind::Convolution | LayerKind::Pooling => ((rows - kernel) / stride + 1, kernel),
        LayerKind::ReLU => (rows, 1),
        LayerKind::Dense | LayerKind::GlobalPooling => (1, 1),
    };
    LayerSpec {
        name,
        kind,
        channels_in: c_in,
        channels_out: c_out,
        rows_in: rows,
        cols_in: rows,
        rows_out,
        cols_out: rows_out,
        kernel_rows: k,
        kernel_cols: k,
        stride,
        padding: 0,
        weight_bits: 8,
        activation_bits: 8,
    }
}

/// A shape-consistent chain of `n` layers with at most `max_channels` channels.
pub fn random_network<R: Rng>(rng: &mut R, n: usize, max_channels: u32) -> NetworkModel {
    let mut c = rng.gen_range(1..=max_channels);
    let mut rows = rng.gen_range(1..=6u32);
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!("l{i}");
        let mut kinds = vec![LayerKind::ReLU, LayerKind::GlobalPooling, LayerKind::Convolution];
        if rows >= 2 {
            kinds.push(LayerKind::Pooling);
        }
        if rows == 1 || c * rows * rows <= max_channels {
            kinds.push(LayerKind::Dense);
        }
        let l = match *kinds.choose(rng).unwrap() {
            LayerKind::Convolution => {
                let k = rng.gen_range(1..=rows.min(3));
                let c_out = rng.gen_range(1..=max_channels);
                layer(name, LayerKind::Convolution, c, c_out, rows, k, 1)
            }
            LayerKind::Pooling => layer(name, LayerKind::Pooling, c, c, rows, 2, 2),
            LayerKind::Dense => {
                let c_out = rng.gen_range(1..=max_channels);
                layer(name, LayerKind::Dense, c * rows * rows, c_out, 1, 1, 1)
            }
            kind => layer(name, kind, c, c, rows, 1, 1),
        };
        c = l.channels_out;
        rows = l.rows_out;
        layers.push(l);
    }
    NetworkModel {
        name: "random".into(),
        layers,
    }
}

pub fn random_backend<R: Rng>(rng: &mut R) -> BackendKind {
    *BackendKind::ALL.choose(rng).unwrap()
}
