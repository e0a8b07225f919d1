//! Principal components by power iteration with deflation.

use std::fmt::Write as _;

use rand::Rng;
use sgrec_tensor::rng;

use crate::error::{Error, Result};

pub const TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each direction.
    pub variances: Vec<f64>,
    /// Total variance of the centered data.
    pub total_variance: f64,
    /// Row projections onto the requested components; zero where a
    /// component could not be extracted.
    pub coordinates: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top `components` directions of the row-centered `rows`.
pub fn pca(rows: &[Vec<f64>], components: usize) -> Result<Pca> {
    let n = rows.len();
    if n == 0 || components == 0 {
        return Err(Error::invalid("PCA needs at least one row and one component"));
    }
    if n < components {
        return Err(Error::invalid(format!("{n} rows cannot give {components} components")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("PCA rows have unequal lengths"));
    }

    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let denom = (n.max(2) - 1) as f64;
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            if r[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j] / denom;
            }
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let floor = 1e-12 * total_variance.max(f64::MIN_POSITIVE);

    let mut rng = rng::stream(0x5ca1ab1e, 0);
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut variances = Vec::new();
    let mut warnings = Vec::new();
    for c in 0..components.min(d) {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..MAX_ITERATIONS {
            let mut w: Vec<f64> = (0..d).map(|i| dot(&cov[i * d..(i + 1) * d], &v)).collect();
            for u in &found {
                let p = dot(&w, u);
                w.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            lambda = normalize(&mut w);
            if lambda <= floor {
                break;
            }
            let sign = if dot(&w, &v) < 0.0 { -1.0 } else { 1.0 };
            let delta = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - sign * b).powi(2))
                .sum::<f64>()
                .sqrt();
            v = w;
            if delta < TOLERANCE {
                break;
            }
        }
        if lambda <= floor {
            warnings.push(format!(
                "data has rank {c}; emitted {c} of {components} components"
            ));
            break;
        }
        // Rayleigh quotient, then deflate.
        let cv: Vec<f64> = (0..d).map(|i| dot(&cov[i * d..(i + 1) * d], &v)).collect();
        let var = dot(&v, &cv);
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= var * v[i] * v[j];
            }
        }
        variances.push(var);
        found.push(v);
    }

    let coordinates = centered
        .iter()
        .map(|r| {
            (0..components)
                .map(|c| found.get(c).map_or(0.0, |u| dot(r, u)))
                .collect()
        })
        .collect();
    Ok(Pca {
        components: found,
        variances,
        total_variance,
        coordinates,
        warnings,
    })
}

impl Pca {
    /// `item_id,x,y` rows.
    pub fn to_csv(&self, ids: &[String]) -> String {
        let mut s = String::from("item_id,x,y\n");
        for (id, c) in ids.iter().zip(&self.coordinates) {
            let x = c.first().copied().unwrap_or(0.0);
            let y = c.get(1).copied().unwrap_or(0.0);
            writeln!(s, "{id},{x},{y}").unwrap();
        }
        s
    }
}
