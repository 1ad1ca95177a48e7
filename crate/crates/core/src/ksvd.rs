//! K-SVD initialization of the class dictionaries.
//!
//! Each class is fitted independently: orthogonal matching pursuit with a
//! budget of `min(3, K′)` atoms, then a rank-1 update of every atom against
//! the residual of the samples that use it. Unused atoms are replaced by the
//! worst-reconstructed sample.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dictionary::GlobalDictionary;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

const MAX_SPARSITY: usize = 3;
const POWER_ITERS: usize = 200;
const TINY: f64 = 1e-12;

/// Fits `atoms_per_class` unit-norm atoms per class. `x` is M × N, labels are
/// zero-based class indices in `0..num_classes`.
pub fn ksvd_init(
    x: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    atoms_per_class: usize,
    iters: usize,
    seed: u64,
) -> Result<GlobalDictionary> {
    if labels.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x.ncols()
        )));
    }
    if atoms_per_class == 0 {
        return Err(Error::InvalidParam("atoms per class must be positive".into()));
    }
    let mut dicts = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&n| labels[n] == class).collect();
        if idx.len() < atoms_per_class {
            return Err(Error::InsufficientSamples {
                class,
                available: idx.len(),
                required: atoms_per_class,
            });
        }
        let xc = x.select(Axis(1), &idx);
        dicts.push(ksvd_class(
            xc.view(),
            atoms_per_class,
            iters,
            derive_seed(seed, class as u64),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: num_classes,
        });
    }
    GlobalDictionary::from_class_dicts(&dicts)
}

fn ksvd_class(x: ArrayView2<f64>, k: usize, iters: usize, seed: u64) -> Array2<f64> {
    let (m, n) = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Array2::zeros((m, k));
    for (j, i) in index::sample(&mut rng, n, k).into_iter().enumerate() {
        let atom = unit_or_random(x.column(i), &mut rng);
        d.column_mut(j).assign(&atom);
    }
    let sparsity = k.min(MAX_SPARSITY);
    for _ in 0..iters {
        let codes = omp_all(d.view(), x, sparsity);
        for j in 0..k {
            let users: Vec<usize> = (0..n).filter(|&i| codes[[j, i]] != 0.0).collect();
            if users.is_empty() {
                let resid = &x - &d.dot(&codes);
                let worst = (0..n)
                    .map(|i| (i, resid.column(i).dot(&resid.column(i))))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                let atom = unit_or_random(x.column(worst), &mut rng);
                d.column_mut(j).assign(&atom);
                continue;
            }
            // E_j = X_R − D A_R + d_j a_j,R
            let xr = x.select(Axis(1), &users);
            let ar = codes.select(Axis(1), &users);
            let mut err = &xr - &d.dot(&ar);
            let dj = d.column(j).to_owned();
            let aj = ar.row(j).to_owned();
            for (mut col, &coef) in err.columns_mut().into_iter().zip(aj.iter()) {
                col.scaled_add(coef, &dj);
            }
            if let Some(u) = top_left_singular(err.view(), aj.view()) {
                d.column_mut(j).assign(&u);
            }
        }
    }
    for mut col in d.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > TINY {
            col /= norm;
        }
        if let Some(&first) = col.iter().find(|v| v.abs() > TINY) {
            if first < 0.0 {
                col.mapv_inplace(|v| -v);
            }
        }
    }
    d
}

fn unit_or_random<R: Rng>(v: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > TINY {
        return &v / norm;
    }
    loop {
        let r: Array1<f64> = (0..v.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nr = r.dot(&r).sqrt();
        if nr > TINY {
            return r / nr;
        }
    }
}

/// Leading left singular vector of `e` by power iteration on `eᵀe`.
fn top_left_singular(e: ArrayView2<f64>, start: ArrayView1<f64>) -> Option<Array1<f64>> {
    let gram = e.t().dot(&e);
    let mut v = start.to_owned();
    let mut nv = v.dot(&v).sqrt();
    if nv <= TINY {
        v.fill(1.0);
        nv = (v.len() as f64).sqrt();
    }
    v /= nv;
    for _ in 0..POWER_ITERS {
        let w = gram.dot(&v);
        let nw = w.dot(&w).sqrt();
        if nw <= TINY {
            return None;
        }
        let next = w / nw;
        let change = (&next - &v).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        v = next;
        if change < 1e-13 {
            break;
        }
    }
    let u = e.dot(&v);
    let nu = u.dot(&u).sqrt();
    (nu > TINY).then(|| u / nu)
}

/// Orthogonal matching pursuit of every column of `x`; returns K × N codes.
pub fn omp_all(d: ArrayView2<f64>, x: ArrayView2<f64>, sparsity: usize) -> Array2<f64> {
    let k = d.ncols();
    let gram = d.t().dot(&d);
    let corr = d.t().dot(&x);
    let mut codes = Array2::zeros((k, x.ncols()));
    for i in 0..x.ncols() {
        let coef = omp(d, gram.view(), corr.column(i), x.column(i), sparsity);
        codes.column_mut(i).assign(&coef);
    }
    codes
}

fn omp(
    d: ArrayView2<f64>,
    gram: ArrayView2<f64>,
    corr: ArrayView1<f64>,
    x: ArrayView1<f64>,
    sparsity: usize,
) -> Array1<f64> {
    let k = d.ncols();
    let mut chosen: Vec<usize> = Vec::with_capacity(sparsity);
    let mut coef = Array1::zeros(k);
    let mut resid = x.to_owned();
    for _ in 0..sparsity {
        let dr = d.t().dot(&resid);
        let best = (0..k)
            .filter(|j| !chosen.contains(j))
            .map(|j| (j, dr[j].abs()))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((j, score)) = best else { break };
        if score <= TINY {
            break;
        }
        chosen.push(j);
        let s = chosen.len();
        let sub = Array2::from_shape_fn((s, s), |(a, b)| gram[[chosen[a], chosen[b]]]);
        let rhs: Array1<f64> = chosen.iter().map(|&c| corr[c]).collect();
        let Some(sol) = solve_small(sub, rhs) else {
            chosen.pop();
            break;
        };
        coef.fill(0.0);
        for (&c, &v) in chosen.iter().zip(sol.iter()) {
            coef[c] = v;
        }
        resid = &x - &d.dot(&coef);
    }
    coef
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub(crate) fn solve_small(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if a[[piv, col]].abs() <= 1e-12 * scale {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap([piv, c], [col, c]);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[[r, col]] / a[[col, col]];
            for c in col..n {
                a[[r, c]] -= f * a[[col, c]];
            }
            b[r] -= f * b[col];
        }
    }
    let mut out = Array1::zeros(n);
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[[r, c]] * out[c];
        }
        out[r] = acc / a[[r, r]];
    }
    Some(out)
}
