//! Exact moments of SE kernel expansions `f_a(x) = Σ_i β_ai k_a(X_i, x)` under a Gaussian
//! input, shared by GP moment matching and the RBF policy.
//!
//! Per output `a`, with `P = (S + Λ_a)⁻¹`, `ν_i = X_i − m` and `t_i = P ν_i`:
//!
//! * `q_i = σ_f² |SΛ⁻¹ + I|^{-1/2} exp(−½ ν_iᵀ t_i)`, mean `M_a = βᵀq`,
//! * input-output covariance `S·C_a` with `C_a = Σ β_i q_i t_i`.
//!
//! Per pair `(a, b)`, with `A = Λ_a⁻¹`, `B = Λ_b⁻¹`, `R = S(A + B) + I`, `Ξ = R⁻¹S`:
//!
//! * `log Q_ij = log k_a(X_i, m) + log k_b(X_j, m) − ½ log|R| + ½ z_ijᵀ Ξ z_ij`,
//!   `z_ij = Aν_i + Bν_j`,
//! * `cov_ab = β_aᵀ Q β_b − M_a M_b`, plus `σ_f² − tr((K + σ_w² I)⁻¹ Q) + σ_w²` on the
//!   diagonal for a GP with model uncertainty.
//!
//! With `M_R = (Cab S + I)⁻¹` and `w_ij = M_R z_ij` the input derivatives are
//! `∂Q_ij/∂m = Q_ij w_ij` and `∂Q_ij/∂S = Q_ij(½ w_ij w_ijᵀ − ½ M_R Cab)`. All pair sums are
//! reduced to row sums, column sums and one `n×n` by `n×D` product, so each pair costs
//! `O(n²D)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tangent::{MapJacobian, MomentMap};

/// One output of a kernel expansion.
pub(crate) struct ExpansionOutput<'a> {
    pub log_ell: DVector<f64>,
    pub sf2: f64,
    pub beta: &'a DVector<f64>,
    /// `(K + σ_w² I)⁻¹` when the model-uncertainty term is included.
    pub inv_k: Option<&'a DMatrix<f64>>,
    /// Constant added to the output variance.
    pub noise: f64,
}

impl ExpansionOutput<'_> {
    fn inv_ell2(&self) -> DVector<f64> {
        self.log_ell.map(|l| (-2.0 * l).exp())
    }
}

pub(crate) struct Single {
    pub p: DMatrix<f64>,
    pub nu: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub q: DVector<f64>,
    /// `β ∘ q`
    pub u: DVector<f64>,
    pub mean: f64,
    pub c: DVector<f64>,
}

pub(crate) struct Pair {
    pub a: usize,
    pub b: usize,
    pub q: DMatrix<f64>,
    /// Coefficient-weighted `Q` whose entry sum is `E[f_a f_b]` (minus constants).
    pub w: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

pub(crate) struct Expansion {
    pub singles: Vec<Single>,
    pub pairs: Vec<Pair>,
    pub map: MomentMap,
}

fn single(x: &DMatrix<f64>, out: &ExpansionOutput, m: &DVector<f64>, s: &DMatrix<f64>) -> Result<Single> {
    let (n, d) = x.shape();
    let ell2 = out.log_ell.map(|l| (2.0 * l).exp());
    let mut spl = s.clone();
    for k in 0..d {
        spl[(k, k)] += ell2[k];
    }
    let ch = linalg::spd_cholesky(&spl, "S + Λ")?;
    let p = ch.inverse();
    let log_c = out.sf2.ln() + out.log_ell.sum() - 0.5 * linalg::log_det(&ch);
    let mut nu = DMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            nu[(i, k)] = x[(i, k)] - m[k];
        }
    }
    let t = &nu * &p;
    let q = DVector::from_fn(n, |i, _| {
        let quad: f64 = (0..d).map(|k| nu[(i, k)] * t[(i, k)]).sum();
        (log_c - 0.5 * quad).exp()
    });
    let u = out.beta.component_mul(&q);
    let mean = u.sum();
    let c = t.tr_mul(&u);
    Ok(Single { p, nu, t, q, u, mean, c })
}

/// `(Q, Ξ, M_R, Cab)` of a pair.
fn pair_matrices(
    nu: &DMatrix<f64>,
    out_a: &ExpansionOutput,
    out_b: &ExpansionOutput,
    s: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let (n, d) = nu.shape();
    let ia = out_a.inv_ell2();
    let ib = out_b.inv_ell2();
    let cab = &ia + &ib;
    let sq = cab.map(f64::sqrt);
    let mut h = DMatrix::from_fn(d, d, |i, j| sq[i] * s[(i, j)] * sq[j]);
    for k in 0..d {
        h[(k, k)] += 1.0;
    }
    let ch = linalg::spd_cholesky(&h, "S(Λa⁻¹ + Λb⁻¹) + I")?;
    let hinv = ch.inverse();
    let mr = DMatrix::from_fn(d, d, |i, j| sq[i] * hinv[(i, j)] / sq[j]);
    let xi = linalg::symmetrized(s * &mr);
    let half_logdet = 0.5 * linalg::log_det(&ch);

    let na = DMatrix::from_fn(n, d, |i, k| nu[(i, k)] * ia[k]);
    let nb = DMatrix::from_fn(n, d, |i, k| nu[(i, k)] * ib[k]);
    let na_xi = &na * &xi;
    let nb_xi = &nb * &xi;
    let ka = DVector::from_fn(n, |i, _| {
        let mut v = out_a.sf2.ln();
        for k in 0..d {
            v += -0.5 * nu[(i, k)] * na[(i, k)] + 0.5 * na_xi[(i, k)] * na[(i, k)];
        }
        v
    });
    let kb = DVector::from_fn(n, |j, _| {
        let mut v = out_b.sf2.ln() - half_logdet;
        for k in 0..d {
            v += -0.5 * nu[(j, k)] * nb[(j, k)] + 0.5 * nb_xi[(j, k)] * nb[(j, k)];
        }
        v
    });
    let mut q = na_xi * nb.transpose();
    for j in 0..n {
        for i in 0..n {
            q[(i, j)] = (q[(i, j)] + ka[i] + kb[j]).exp();
        }
    }
    Ok((q, xi, mr, cab))
}

/// Moments of all outputs under `x ~ N(m, s)`, with input derivatives if `with_jac`.
pub(crate) fn expansion_moments(
    x: &DMatrix<f64>,
    outs: &[ExpansionOutput],
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    with_jac: bool,
) -> Result<Expansion> {
    let (n, d) = x.shape();
    let e = outs.len();
    if m.len() != d || s.shape() != (d, d) {
        return Err(Error::dim(format!("input of dimension {} for a {d}-dimensional expansion", m.len())));
    }
    let singles = outs.iter().map(|o| single(x, o, m, s)).collect::<Result<Vec<_>>>()?;
    let nu = &singles[0].nu;

    let mut mean = DVector::zeros(e);
    let mut cross = DMatrix::zeros(d, e);
    let mut jac = MapJacobian::zeros(d, e);
    // dM_a/dS as d×d matrices, reused for the covariance derivatives.
    let mut dmean_ds: Vec<DMatrix<f64>> = Vec::with_capacity(e);
    for (a, sg) in singles.iter().enumerate() {
        mean[a] = sg.mean;
        cross.set_column(a, &sg.c);
        if with_jac {
            // Σ β_i q_i t_i t_iᵀ
            let tu = DMatrix::from_fn(n, d, |i, k| sg.t[(i, k)] * sg.u[i]);
            let ttu = sg.t.tr_mul(&tu);
            let dm_ds = 0.5 * &ttu - 0.5 * sg.mean * &sg.p;
            for k in 0..d {
                jac.mean_mean[(a, k)] = sg.c[k];
            }
            for (idx, v) in dm_ds.iter().enumerate() {
                jac.mean_cov[(a, idx)] = *v;
            }
            let dc_dm = &ttu - sg.mean * &sg.p;
            for k in 0..d {
                for l in 0..d {
                    jac.cross_mean[(k + a * d, l)] = dc_dm[(k, l)];
                }
            }
            // dC_k/dS_pq = −P_kp C_q − ½ P_pq C_k + ½ Σ_i u_i t_ik t_ip t_iq
            for q_ in 0..d {
                for p_ in 0..d {
                    let col = p_ + q_ * d;
                    let mut third = DVector::zeros(d);
                    for i in 0..n {
                        let f = 0.5 * sg.u[i] * sg.t[(i, p_)] * sg.t[(i, q_)];
                        if f != 0.0 {
                            third.axpy(f, &sg.t.row(i).transpose(), 1.0);
                        }
                    }
                    for k in 0..d {
                        jac.cross_cov[(k + a * d, col)] =
                            -sg.p[(k, p_)] * sg.c[q_] - 0.5 * sg.p[(p_, q_)] * sg.c[k] + third[k];
                    }
                }
            }
            dmean_ds.push(dm_ds);
        }
    }

    let mut cov = DMatrix::zeros(e, e);
    let mut pairs = Vec::with_capacity(e * (e + 1) / 2);
    for a in 0..e {
        for b in a..e {
            let (q, xi, mr, cab) = pair_matrices(nu, &outs[a], &outs[b], s)?;
            let mut w = outs[a].beta * outs[b].beta.transpose();
            w.component_mul_assign(&q);
            let mut constant = 0.0;
            if a == b {
                if let Some(ik) = outs[a].inv_k {
                    w -= ik.component_mul(&q);
                    constant += outs[a].sf2;
                }
                constant += outs[a].noise;
            }
            let value = w.sum() - mean[a] * mean[b] + constant;
            cov[(a, b)] = value;
            cov[(b, a)] = value;
            if with_jac {
                let r = w.column_sum();
                let c = w.row_sum().transpose();
                let ia = outs[a].inv_ell2();
                let ib = outs[b].inv_ell2();
                // ζa_i = M_R A ν_i stored as rows
                let za = DMatrix::from_fn(n, d, |i, k| nu[(i, k)] * ia[k]) * mr.transpose();
                let zb = DMatrix::from_fn(n, d, |i, k| nu[(i, k)] * ib[k]) * mr.transpose();
                let g = &w * &zb;
                let sum_w = za.tr_mul(&r) + zb.tr_mul(&c);
                let zar = DMatrix::from_fn(n, d, |i, k| za[(i, k)] * r[i]);
                let zbc = DMatrix::from_fn(n, d, |i, k| zb[(i, k)] * c[i]);
                let mut sum_ww = za.tr_mul(&zar) + zb.tr_mul(&zbc);
                let cross_term = za.tr_mul(&g);
                sum_ww += &cross_term + cross_term.transpose();
                let dm = sum_w - &singles[a].c * mean[b] - &singles[b].c * mean[a];
                let mrc = DMatrix::from_fn(d, d, |i, j| mr[(i, j)] * cab[j]);
                let ds = 0.5 * sum_ww - 0.5 * w.sum() * mrc - &dmean_ds[a] * mean[b] - &dmean_ds[b] * mean[a];
                for (row, other) in [(a + b * e, b + a * e)] {
                    for k in 0..d {
                        jac.cov_mean[(row, k)] = dm[k];
                        jac.cov_mean[(other, k)] = dm[k];
                    }
                    for (idx, v) in ds.iter().enumerate() {
                        jac.cov_cov[(row, idx)] = *v;
                        jac.cov_cov[(other, idx)] = *v;
                    }
                }
            }
            pairs.push(Pair { a, b, q, w, xi });
        }
    }

    let jac = if with_jac {
        jac.symmetrize(d, e);
        Some(jac)
    } else {
        None
    };
    Ok(Expansion { singles, pairs, map: MomentMap { mean, cov, cross, jac } })
}

/// Partial derivatives of `[mean; vec(cov); vec(cross)]` of an expansion without model
/// uncertainty with respect to its coefficients `β_a`, centers `X` and log length-scales,
/// holding the input moments fixed.
pub(crate) struct ParamPartials {
    /// Per output `a`: `nout × n`.
    pub d_beta: Vec<DMatrix<f64>>,
    /// `nout × (n·D)`, column `i + k·n` for `X_ik`.
    pub d_centers: DMatrix<f64>,
    /// Per output `a`: `nout × D`.
    pub d_log_ell: Vec<DMatrix<f64>>,
}

pub(crate) fn param_partials(x: &DMatrix<f64>, outs: &[ExpansionOutput], exp: &Expansion) -> ParamPartials {
    let (n, d) = x.shape();
    let e = outs.len();
    let nout = e + e * e + d * e;
    let mut d_beta = vec![DMatrix::zeros(nout, n); e];
    let mut d_centers = DMatrix::zeros(nout, n * d);
    let mut d_log_ell = vec![DMatrix::zeros(nout, d); e];
    let singles = &exp.singles;
    let nu = &singles[0].nu;

    // d log q_ai / d log ℓ_ak = 1 − ℓ_k² P_kk + ℓ_k² t_ik²
    let dlogq: Vec<DMatrix<f64>> = (0..e)
        .map(|a| {
            let ell2 = outs[a].log_ell.map(|l| (2.0 * l).exp());
            let sg = &singles[a];
            DMatrix::from_fn(n, d, |i, k| 1.0 - ell2[k] * sg.p[(k, k)] + ell2[k] * sg.t[(i, k)].powi(2))
        })
        .collect();
    // dM_a/dX as n×D and dM_a/dlogℓ_a as D-vector
    let mut dmean_dx = Vec::with_capacity(e);
    let mut dmean_dl = Vec::with_capacity(e);

    for a in 0..e {
        let sg = &singles[a];
        let ell2 = outs[a].log_ell.map(|l| (2.0 * l).exp());
        let dmx = DMatrix::from_fn(n, d, |i, k| -sg.u[i] * sg.t[(i, k)]);
        let dml = dlogq[a].tr_mul(&sg.u);
        d_beta[a].row_mut(a).copy_from(&sg.q.transpose());
        for k in 0..d {
            for i in 0..n {
                d_centers[(a, i + k * n)] = dmx[(i, k)];
            }
            d_log_ell[a][(a, k)] = dml[k];
        }
        // cross C_a[k]
        for k in 0..d {
            let row = e + e * e + k + a * d;
            for i in 0..n {
                d_beta[a][(row, i)] = sg.q[i] * sg.t[(i, k)];
                for l in 0..d {
                    d_centers[(row, i + l * n)] = sg.u[i] * (sg.p[(k, l)] - sg.t[(i, k)] * sg.t[(i, l)]);
                }
            }
            for l in 0..d {
                let mut v = -2.0 * ell2[l] * sg.p[(k, l)] * sg.c[l];
                for i in 0..n {
                    v += sg.u[i] * sg.t[(i, k)] * dlogq[a][(i, l)];
                }
                d_log_ell[a][(row, l)] = v;
            }
        }
        dmean_dx.push(dmx);
        dmean_dl.push(dml);
    }

    for pr in &exp.pairs {
        let (a, b) = (pr.a, pr.b);
        let rows = [e + a + b * e, e + b + a * e];
        let (ma, mb) = (singles[a].mean, singles[b].mean);
        let w = &pr.w;
        let r = w.column_sum();
        let c = w.row_sum().transpose();
        let sum_w = w.sum();
        let ia = outs[a].inv_ell2();
        let ib = outs[b].inv_ell2();

        // coefficients
        let ga = &pr.q * outs[b].beta - &singles[a].q * mb;
        let gb = pr.q.tr_mul(outs[a].beta) - &singles[b].q * ma;
        for &row in rows.iter().take(if a == b { 1 } else { 2 }) {
            let mut ra = d_beta[a].row_mut(row);
            ra += ga.transpose();
            let mut rb = d_beta[b].row_mut(row);
            rb += gb.transpose();
        }

        // centers: y_ij = Ξ(Aν_i + Bν_j)
        let na = DMatrix::from_fn(n, d, |i, k| nu[(i, k)] * ia[k]);
        let nb = DMatrix::from_fn(n, d, |i, k| nu[(i, k)] * ib[k]);
        let ya = &na * &pr.xi;
        let yb = &nb * &pr.xi;
        let wn = w * nu;
        let wtn = w.tr_mul(nu);
        let inner_a = DMatrix::from_fn(n, d, |i, k| na[(i, k)] * r[i]) + DMatrix::from_fn(n, d, |i, k| wn[(i, k)] * ib[k]);
        let inner_b = DMatrix::from_fn(n, d, |i, k| wtn[(i, k)] * ia[k]) + DMatrix::from_fn(n, d, |i, k| nb[(i, k)] * c[i]);
        let xa = &inner_a * &pr.xi;
        let xb = &inner_b * &pr.xi;
        let dvx = DMatrix::from_fn(n, d, |l, k| {
            -ia[k] * (r[l] * nu[(l, k)] - xa[(l, k)]) - ib[k] * (c[l] * nu[(l, k)] - xb[(l, k)])
                - dmean_dx[a][(l, k)] * mb
                - ma * dmean_dx[b][(l, k)]
        });

        // length-scales
        let wyb = w * &yb;
        let wtya = w.tr_mul(&ya);
        let mut s2 = DVector::zeros(d);
        let mut sa = DVector::zeros(d);
        let mut sb = DVector::zeros(d);
        for k in 0..d {
            let mut y2 = 0.0;
            let (mut ta, mut tb) = (0.0, 0.0);
            for i in 0..n {
                y2 += r[i] * ya[(i, k)].powi(2) + 2.0 * ya[(i, k)] * wyb[(i, k)] + c[i] * yb[(i, k)].powi(2);
                ta += -0.5 * r[i] * nu[(i, k)].powi(2) + nu[(i, k)] * (r[i] * ya[(i, k)] + wyb[(i, k)]);
                tb += -0.5 * c[i] * nu[(i, k)].powi(2) + nu[(i, k)] * (c[i] * yb[(i, k)] + wtya[(i, k)]);
            }
            s2[k] = y2;
            sa[k] = ta;
            sb[k] = tb;
        }
        let mut dla = DVector::zeros(d);
        let mut dlb = DVector::zeros(d);
        for k in 0..d {
            let common = -0.5 * sum_w * pr.xi[(k, k)] - 0.5 * s2[k];
            dla[k] = -2.0 * ia[k] * (sa[k] + common);
            dlb[k] = -2.0 * ib[k] * (sb[k] + common);
        }
        dla -= &dmean_dl[a] * mb;
        dlb -= &dmean_dl[b] * ma;

        for (idx, &row) in rows.iter().enumerate() {
            if a == b && idx == 1 {
                break;
            }
            for k in 0..d {
                for l in 0..n {
                    d_centers[(row, l + k * n)] = dvx[(l, k)];
                }
            }
            if a == b {
                for k in 0..d {
                    d_log_ell[a][(row, k)] = dla[k] + dlb[k];
                }
            } else {
                for k in 0..d {
                    d_log_ell[a][(row, k)] = dla[k];
                    d_log_ell[b][(row, k)] = dlb[k];
                }
            }
        }
    }
    ParamPartials { d_beta, d_centers, d_log_ell }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{fd_check_moment_map, fd_jacobian, max_rel_err, random_spd};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        x: DMatrix<f64>,
        log_ell: Vec<DVector<f64>>,
        sf2: Vec<f64>,
        beta: Vec<DVector<f64>>,
        inv_k: Vec<DMatrix<f64>>,
    }

    fn fixture(seed: u64, n: usize, d: usize, e: usize) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.5..1.5));
        let log_ell = (0..e).map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-0.3..0.5))).collect();
        let sf2 = (0..e).map(|_| rng.gen_range(0.5..2.0)).collect();
        let beta = (0..e).map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let inv_k = (0..e).map(|_| random_spd(&mut rng, n, 0.3)).collect();
        Fixture { x, log_ell, sf2, beta, inv_k }
    }

    fn outputs(f: &Fixture, with_var: bool) -> Vec<ExpansionOutput<'_>> {
        (0..f.beta.len())
            .map(|a| ExpansionOutput {
                log_ell: f.log_ell[a].clone(),
                sf2: f.sf2[a],
                beta: &f.beta[a],
                inv_k: with_var.then_some(&f.inv_k[a]),
                noise: if with_var { 0.05 } else { 0.0 },
            })
            .collect()
    }

    #[test]
    fn input_derivatives_match_finite_differences() {
        for seed in 0..4 {
            let f = fixture(seed, 8, 3, 2);
            let outs = outputs(&f, seed % 2 == 0);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let s = random_spd(&mut rng, 3, 0.5);
            let m = DVector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5));
            let err = fd_check_moment_map(|m, s, j| expansion_moments(&f.x, &outs, m, s, j).unwrap().map, &m, &s, 1e-4);
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    fn flatten(map: &MomentMap) -> DVector<f64> {
        let mut v = map.mean.as_slice().to_vec();
        v.extend_from_slice(map.cov.as_slice());
        v.extend_from_slice(map.cross.as_slice());
        DVector::from_vec(v)
    }

    #[test]
    fn parameter_partials_match_finite_differences() {
        let (n, d, e) = (6, 3, 2);
        let f = fixture(7, n, d, e);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_spd(&mut rng, d, 0.4);
        let m = DVector::from_fn(d, |_, _| rng.gen_range(-0.5..0.5));
        let outs = outputs(&f, false);
        let exp = expansion_moments(&f.x, &outs, &m, &s, false).unwrap();
        let pp = param_partials(&f.x, &outs, &exp);

        let eval = |x: &DMatrix<f64>, ell: &[DVector<f64>], beta: &[DVector<f64>]| {
            let outs: Vec<_> = (0..e)
                .map(|a| ExpansionOutput { log_ell: ell[a].clone(), sf2: f.sf2[a], beta: &beta[a], inv_k: None, noise: 0.0 })
                .collect();
            flatten(&expansion_moments(x, &outs, &m, &s, false).unwrap().map)
        };
        let xv = DVector::from_column_slice(f.x.as_slice());
        let num_x = fd_jacobian(|v| eval(&DMatrix::from_column_slice(n, d, v.as_slice()), &f.log_ell, &f.beta), &xv, 1e-4);
        assert!(max_rel_err(&pp.d_centers, &num_x, 1e-6) < 1e-6);
        for a in 0..e {
            let num_l = fd_jacobian(
                |v| {
                    let mut ell = f.log_ell.clone();
                    ell[a] = v.clone();
                    eval(&f.x, &ell, &f.beta)
                },
                &f.log_ell[a],
                1e-4,
            );
            assert!(max_rel_err(&pp.d_log_ell[a], &num_l, 1e-6) < 1e-6, "log ell {a}");
            let num_b = fd_jacobian(
                |v| {
                    let mut beta = f.beta.clone();
                    beta[a] = v.clone();
                    eval(&f.x, &f.log_ell, &beta)
                },
                &f.beta[a],
                1e-4,
            );
            assert!(max_rel_err(&pp.d_beta[a], &num_b, 1e-6) < 1e-6, "beta {a}");
        }
    }
}
