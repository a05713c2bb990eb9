//! Reference implementations written independently of the library code.

use policylab::runtime::ModelWeights;

/// Compensated summation.
pub fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lz = neumaier(logits.iter().map(|l| (l - m).exp())).ln() + m;
    logits.iter().map(|l| l - lz).collect()
}

pub fn entropy(logits: &[f64]) -> f64 {
    let lp = log_softmax(logits);
    -neumaier(lp.iter().filter(|l| l.exp() > 0.0).map(|&l| l.exp() * l))
}

fn mv(m: &policylab::linalg::Matrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| neumaier((0..m.cols()).map(|j| m.get(i, j) * x[j]))).collect()
}

fn rmsnorm(x: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let ms = neumaier(x.iter().map(|v| v * v)) / x.len() as f64;
    let r = (ms + eps).sqrt();
    x.iter().zip(g).map(|(v, g)| v / r * g).collect()
}

fn rotate(x: &mut [f64], pos: usize, d_head: usize, base: f64) {
    for h in 0..x.len() / d_head {
        for i in 0..d_head / 2 {
            let ang = pos as f64 / base.powf((2 * i) as f64 / d_head as f64);
            let (a, b) = (x[h * d_head + 2 * i], x[h * d_head + 2 * i + 1]);
            x[h * d_head + 2 * i] = a * ang.cos() - b * ang.sin();
            x[h * d_head + 2 * i + 1] = a * ang.sin() + b * ang.cos();
        }
    }
}

/// Keys and values, `[layer][position][d_model]`.
#[derive(Clone, Debug, Default)]
pub struct NaiveKv {
    pub k: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<Vec<f64>>>,
}

impl NaiveKv {
    pub fn new(n_layers: usize) -> Self {
        Self {
            k: vec![Vec::new(); n_layers],
            v: vec![Vec::new(); n_layers],
        }
    }

    pub fn len(&self) -> usize {
        self.k[0].len()
    }

    /// Overwrites `span` with the same positions of `donor`.
    pub fn splice(&mut self, donor: &NaiveKv, span: std::ops::Range<usize>) {
        for l in 0..self.k.len() {
            for p in span.clone() {
                self.k[l][p] = donor.k[l][p].clone();
                self.v[l][p] = donor.v[l][p].clone();
            }
        }
    }
}

/// Steering added at every position after each block in `lo..=hi`.
pub struct NaiveSteer<'a> {
    pub lo: usize,
    pub hi: usize,
    pub vector: &'a [f64],
}

/// Runs `tokens` after whatever `kv` holds and returns their logits.
pub fn extend(w: &ModelWeights<f64>, kv: &mut NaiveKv, tokens: &[u32], steer: Option<&NaiveSteer>) -> Vec<Vec<f64>> {
    let d = &w.dims;
    let start = kv.len();
    let mut xs: Vec<Vec<f64>> = tokens.iter().map(|&t| w.embed.row(t as usize).to_vec()).collect();
    for (l, lw) in w.layers.iter().enumerate() {
        let mut qs = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let a = rmsnorm(x, &lw.attn_norm, d.norm_eps);
            let (mut q, mut k) = (mv(&lw.wq, &a), mv(&lw.wk, &a));
            rotate(&mut q, start + i, d.d_head, d.rope_base);
            rotate(&mut k, start + i, d.d_head, d.rope_base);
            kv.k[l].push(k);
            kv.v[l].push(mv(&lw.wv, &a));
            qs.push(q);
        }
        for (i, x) in xs.iter_mut().enumerate() {
            let pos = start + i;
            let mut att = vec![0.0; d.d_model];
            for h in 0..d.n_heads {
                let r = h * d.d_head..(h + 1) * d.d_head;
                let scores: Vec<f64> = (0..=pos)
                    .map(|j| neumaier(r.clone().map(|c| qs[i][c] * kv.k[l][j][c])) / (d.d_head as f64).sqrt())
                    .collect();
                let lp = log_softmax(&scores);
                for c in r.clone() {
                    att[c] = neumaier((0..=pos).map(|j| lp[j].exp() * kv.v[l][j][c]));
                }
            }
            let o = mv(&lw.wo, &att);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let m = rmsnorm(x, &lw.mlp_norm, d.norm_eps);
            let hdn: Vec<f64> = mv(&lw.w_in, &m).into_iter().map(|z| z / (1.0 + (-z).exp())).collect();
            let out = mv(&lw.w_out, &hdn);
            x.iter_mut().zip(&out).for_each(|(a, b)| *a += b);
            if let Some(s) = steer {
                if (s.lo..=s.hi).contains(&l) {
                    x.iter_mut().zip(s.vector).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    xs.iter()
        .map(|x| {
            let f = rmsnorm(x, &w.final_norm, d.norm_eps);
            mv(&w.unembed, &f).iter().zip(&w.unembed_bias).map(|(a, b)| a + b).collect()
        })
        .collect()
}

pub fn forward(w: &ModelWeights<f64>, tokens: &[u32]) -> Vec<Vec<f64>> {
    extend(w, &mut NaiveKv::new(w.dims.n_layers), tokens, None)
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
