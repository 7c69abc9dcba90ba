//! Central finite-difference verification of reverse-mode gradients.

use alloc::string::{String, ToString};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamSet;

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps near-zero coordinates
/// from turning round-off into huge relative errors.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_offset: usize,
    pub checked: usize,
}

impl Report {
    pub fn merge(&mut self, other: &Report) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst_param = other.worst_param.clone();
            self.worst_offset = other.worst_offset;
        }
        self.checked += other.checked;
    }
}

/// Compares `backward` against central differences with step `h` for every
/// scalar in `params`. `f` must build a fresh graph and return its scalar
/// output.
pub fn check<F>(params: &ParamSet, h: f64, f: F) -> Result<Report>
where
    F: Fn(&ParamSet) -> (Graph, Var),
{
    let (g, out) = f(params);
    let analytic = g.backward(out)?.flatten(params);
    let mut work = params.clone();
    let mut flat = params.flatten();
    let mut report = Report::default();
    let names: alloc::vec::Vec<(String, usize)> =
        params.iter().map(|(_, n, t)| (n.to_string(), t.len())).collect();
    let mut k = 0;
    for (name, len) in &names {
        for off in 0..*len {
            let orig = flat[k];
            flat[k] = orig + h;
            work.unflatten(&flat);
            let (gp, op) = f(&work);
            let fp = gp.value(op).item();
            flat[k] = orig - h;
            work.unflatten(&flat);
            let (gm, om) = f(&work);
            let fm = gm.value(om).item();
            flat[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let e = rel_err(analytic[k], numeric);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = name.clone();
                report.worst_offset = off;
            }
            report.checked += 1;
            k += 1;
        }
    }
    Ok(report)
}

type Build = fn(&mut Graph, &ParamSet, &[crate::params::ParamId], &mut crate::rng::Stream) -> Var;

struct Case {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    build: Build,
}

fn p(g: &mut Graph, ps: &ParamSet, ids: &[crate::params::ParamId], i: usize) -> Var {
    g.param(ps, ids[i])
}

fn cases() -> alloc::vec::Vec<Case> {
    use crate::graph::SparseRows;
    use crate::nn;
    use crate::rng;
    use alloc::rc::Rc;
    use alloc::vec;
    vec![
        Case { name: "matmul", shapes: &[&[3, 4], &[4, 2]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.matmul(a, b)
        } },
        Case { name: "matmul_bt", shapes: &[&[3, 4], &[2, 4]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.matmul_bt(a, b)
        } },
        Case { name: "sparse_matmul", shapes: &[&[5, 3]], build: |g, s, i, r| {
            let mut sp = SparseRows::new(5);
            for _ in 0..4 {
                let a = rng::below(r, 5);
                let b = rng::below(r, 5);
                sp.push_row(vec![(a, 1.0), (b, rng::uniform_range(r, -1.0, 1.0))]);
            }
            let w = p(g, s, i, 0);
            g.sparse_matmul(Rc::new(sp), w)
        } },
        Case { name: "add_bias", shapes: &[&[3, 4], &[4]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.add_bias(a, b)
        } },
        Case { name: "add", shapes: &[&[2, 3], &[2, 3]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.add(a, b)
        } },
        Case { name: "sub", shapes: &[&[2, 3], &[2, 3]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.sub(a, b)
        } },
        Case { name: "mul", shapes: &[&[2, 3], &[2, 3]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.mul(a, b)
        } },
        Case { name: "scale", shapes: &[&[5]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.scale(a, -1.7)
        } },
        Case { name: "add_scalar", shapes: &[&[5]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.add_scalar(a, 0.3)
        } },
        Case { name: "tanh", shapes: &[&[6]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.tanh(a)
        } },
        Case { name: "sigmoid", shapes: &[&[6]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.sigmoid(a)
        } },
        Case { name: "exp", shapes: &[&[6]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.exp(a)
        } },
        Case { name: "log_sigmoid", shapes: &[&[6]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.log_sigmoid(a)
        } },
        Case { name: "softmax", shapes: &[&[3, 4]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.softmax(a)
        } },
        Case { name: "log_softmax", shapes: &[&[3, 4]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.log_softmax(a)
        } },
        Case { name: "pick", shapes: &[&[3, 4]], build: |g, s, i, r| {
            let idx: Rc<[usize]> = (0..3).map(|_| rng::below(r, 4)).collect();
            let a = p(g, s, i, 0);
            g.pick(a, idx)
        } },
        Case { name: "gather_rows", shapes: &[&[4, 3]], build: |g, s, i, r| {
            let idx: Rc<[usize]> = (0..5).map(|_| rng::below(r, 4)).collect();
            let a = p(g, s, i, 0);
            g.gather_rows(a, idx)
        } },
        Case { name: "concat_cols", shapes: &[&[2, 3], &[2, 1]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.concat_cols(&[a, b, a])
        } },
        Case { name: "concat_rows", shapes: &[&[2, 3], &[1, 3]], build: |g, s, i, _| {
            let (a, b) = (p(g, s, i, 0), p(g, s, i, 1));
            g.concat_rows(&[a, b, a])
        } },
        Case { name: "slice_cols", shapes: &[&[3, 5]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.slice_cols(a, 1, 3)
        } },
        Case { name: "reshape", shapes: &[&[2, 3]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.reshape(a, &[3, 2])
        } },
        Case { name: "sum", shapes: &[&[2, 3]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.sum(a)
        } },
        Case { name: "mean", shapes: &[&[2, 3]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.mean(a)
        } },
        Case { name: "row_sum", shapes: &[&[3, 4]], build: |g, s, i, _| {
            let a = p(g, s, i, 0);
            g.row_sum(a)
        } },
        Case { name: "weighted_sum", shapes: &[&[4]], build: |g, s, i, r| {
            let w: Rc<[f64]> = (0..4).map(|_| rng::normal(r)).collect();
            let a = p(g, s, i, 0);
            g.weighted_sum(a, w)
        } },
        Case { name: "clipped_surrogate", shapes: &[&[8]], build: |g, s, i, r| {
            let adv: Rc<[f64]> = (0..8).map(|_| rng::normal(r)).collect();
            let a = p(g, s, i, 0);
            let lr = g.scale(a, 0.3);
            g.clipped_surrogate(lr, adv, 0.2)
        } },
        Case { name: "linear", shapes: &[&[2, 3], &[3, 4], &[4]], build: |g, s, i, _| {
            let l = nn::Linear { w: i[1], b: i[2], inp: 3, out: 4 };
            let x = p(g, s, i, 0);
            l.forward(g, s, &nn::Input::Dense(x))
        } },
        Case { name: "gru_step", shapes: &[&[2, 3], &[2, 4], &[3, 12], &[4, 8], &[4, 4], &[12]], build: |g, s, i, _| {
            let cell = nn::Gru { wx: i[2], wh_zr: i[3], wh_h: i[4], b: i[5], inp: 3, hidden: 4 };
            let (x, h) = (p(g, s, i, 0), p(g, s, i, 1));
            cell.step(g, s, &nn::Input::Dense(x), h)
        } },
        Case { name: "mha", shapes: &[&[2, 3], &[4, 3], &[4, 3], &[3, 3], &[3, 3], &[3, 3], &[3, 3], &[3, 3], &[3, 3], &[6, 3]], build: |g, s, i, _| {
            let m = nn::Mha { heads: 2, dk: 3, dv: 3, wq: vec![i[3], i[6]], wk: vec![i[4], i[7]], wv: vec![i[5], i[8]], wo: i[9] };
            let (q, k, v) = (p(g, s, i, 0), p(g, s, i, 1), p(g, s, i, 2));
            m.forward(g, s, q, k, v)
        } },
        Case { name: "logprob_categorical", shapes: &[&[3, 5]], build: |g, s, i, r| {
            let idx: Rc<[usize]> = (0..3).map(|_| rng::below(r, 5)).collect();
            let a = p(g, s, i, 0);
            nn::categorical_logprob(g, a, idx)
        } },
        Case { name: "logprob_gaussian", shapes: &[&[2, 3], &[2, 3], &[2, 3]], build: |g, s, i, _| {
            let (m, ls, x) = (p(g, s, i, 0), p(g, s, i, 1), p(g, s, i, 2));
            nn::gaussian_logprob(g, m, ls, x)
        } },
    ]
}

/// Runs every primitive and network block through [`check`] at `points`
/// random parameter draws (uniform in [-1, 1]); non-scalar outputs are
/// reduced with random weights.
pub fn primitive_suite(points: usize, seed: u64) -> Result<alloc::vec::Vec<(&'static str, Report)>> {
    use crate::rng;
    use crate::tensor::Tensor;
    let mut out = alloc::vec::Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        let mut report = Report::default();
        for pt in 0..points {
            let mut r = rng::derived(seed, ci as u64, pt as u64);
            let mut ps = ParamSet::new();
            let mut ids = alloc::vec::Vec::new();
            for (k, shape) in case.shapes.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng::uniform_range(&mut r, -1.0, 1.0)).collect();
                ids.push(ps.add(&alloc::format!("x{k}"), Tensor::new(shape.to_vec(), data)?)?);
            }
            let build_seed = rng::derive_seed(seed, 1000 + ci as u64, pt as u64);
            let f = |s: &ParamSet| {
                let mut rr = rng::stream(build_seed);
                let mut g = Graph::new();
                let y = (case.build)(&mut g, s, &ids, &mut rr);
                let w: alloc::rc::Rc<[f64]> = (0..g.value(y).len()).map(|_| rng::normal(&mut rr)).collect();
                let o = g.weighted_sum(y, w);
                (g, o)
            };
            report.merge(&check(&ps, 1e-6, f)?);
        }
        out.push((case.name, report));
    }
    Ok(out)
}
