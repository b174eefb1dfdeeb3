//! Dense two-phase simplex with Bland's rule. Slow but simple; used only as an
//! independent reference for the branch-and-bound solver.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal { x: Vec<f64>, obj: f64 },
    Infeasible,
    Unbounded,
}

const EPS: f64 = 1e-9;

/// Minimize `c.x` subject to `rows` and `lb <= x <= ub` (`lb` finite).
pub fn minimize(c: &[f64], rows: &[(Vec<f64>, Rel, f64)], lb: &[f64], ub: &[f64]) -> LpResult {
    let n = c.len();
    // Shift x = lb + y, y >= 0; finite upper bounds become rows.
    let mut cons: Vec<(Vec<f64>, Rel, f64)> = rows
        .iter()
        .map(|(a, r, b)| {
            let shift: f64 = a.iter().zip(lb).map(|(ai, l)| ai * l).sum();
            (a.clone(), *r, b - shift)
        })
        .collect();
    for j in 0..n {
        if ub[j].is_finite() {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            cons.push((a, Rel::Le, ub[j] - lb[j]));
        }
    }
    let m = cons.len();
    let n_slack = cons.iter().filter(|(_, r, _)| *r != Rel::Eq).count();
    let total = n + n_slack + m; // structural, slack, artificial
    let mut t = vec![vec![0.0; total + 1]; m];
    let mut basis = vec![0usize; m];
    let mut s = n;
    for (i, (a, r, b)) in cons.iter().enumerate() {
        let flip = if *b < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = flip * a[j];
        }
        match r {
            Rel::Le => {
                t[i][s] = flip;
                s += 1;
            }
            Rel::Ge => {
                t[i][s] = -flip;
                s += 1;
            }
            Rel::Eq => {}
        }
        t[i][n + n_slack + i] = 1.0;
        t[i][total] = flip * b;
        basis[i] = n + n_slack + i;
    }
    let art_start = n + n_slack;

    let run =
        |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| -> bool {
            loop {
                // reduced costs
                let mut enter = None;
                for j in 0..allowed {
                    if basis.contains(&j) {
                        continue;
                    }
                    let mut rc = cost[j];
                    for i in 0..t.len() {
                        rc -= cost[basis[i]] * t[i][j];
                    }
                    if rc < -EPS {
                        enter = Some(j);
                        break;
                    }
                }
                let Some(e) = enter else { return true };
                let mut leave: Option<(usize, f64)> = None;
                for i in 0..t.len() {
                    if t[i][e] > EPS {
                        let ratio = t[i][total] / t[i][e];
                        match leave {
                            None => leave = Some((i, ratio)),
                            Some((li, lr)) => {
                                if ratio < lr - EPS || (ratio <= lr + EPS && basis[i] < basis[li]) {
                                    leave = Some((i, ratio));
                                }
                            }
                        }
                    }
                }
                let Some((r, _)) = leave else { return false };
                let p = t[r][e];
                for v in t[r].iter_mut() {
                    *v /= p;
                }
                for i in 0..t.len() {
                    if i != r && t[i][e].abs() > 0.0 {
                        let f = t[i][e];
                        let row_r = t[r].clone();
                        for (v, rv) in t[i].iter_mut().zip(&row_r) {
                            *v -= f * rv;
                        }
                    }
                }
                basis[r] = e;
            }
        };

    let mut phase1 = vec![0.0; total];
    for c in phase1.iter_mut().skip(art_start) {
        *c = 1.0;
    }
    run(&mut t, &mut basis, &phase1, total);
    let infeas: f64 = (0..m)
        .filter(|&i| basis[i] >= art_start)
        .map(|i| t[i][total])
        .sum();
    if infeas > 1e-7 {
        return LpResult::Infeasible;
    }
    // Drive zero-level artificials out of the basis where possible.
    for i in 0..m {
        if basis[i] >= art_start {
            if let Some(e) = (0..art_start).find(|&j| t[i][j].abs() > EPS && !basis.contains(&j)) {
                let p = t[i][e];
                for v in t[i].iter_mut() {
                    *v /= p;
                }
                for k in 0..m {
                    if k != i && t[k][e] != 0.0 {
                        let f = t[k][e];
                        let row = t[i].clone();
                        for (v, rv) in t[k].iter_mut().zip(&row) {
                            *v -= f * rv;
                        }
                    }
                }
                basis[i] = e;
            }
        }
    }
    let mut phase2 = vec![0.0; total];
    phase2[..n].copy_from_slice(c);
    if !run(&mut t, &mut basis, &phase2, art_start) {
        return LpResult::Unbounded;
    }
    let mut y = vec![0.0; total];
    for i in 0..m {
        y[basis[i]] = t[i][total];
    }
    let x: Vec<f64> = (0..n).map(|j| lb[j] + y[j]).collect();
    let obj = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpResult::Optimal { x, obj }
}
