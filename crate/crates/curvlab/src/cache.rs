//! On-disk cache of half-squared-distance cost matrices.
//!
//! Files are CSV with a versioned header carrying the cache key; values are
//! stored both in decimal and as raw IEEE-754 bits so that reloading is exact.

use std::fs;
use std::path::{Path, PathBuf};

use curvlab_core::geodesic::DistanceSolver;
use curvlab_core::transport::CostMatrix;
use curvlab_core::Vec2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Result, RunError};
use crate::io::num;

const MAGIC: &str = "# curvlab cost cache v1";

/// Key from a metric description and the two point clouds, bitwise.
pub fn cache_key(metric_id: &str, sources: &[Vec2], targets: &[Vec2]) -> String {
    let mut h = Sha256::new();
    h.update(metric_id.as_bytes());
    for set in [sources, targets] {
        h.update((set.len() as u64).to_le_bytes());
        for p in set {
            h.update(p[0].to_bits().to_le_bytes());
            h.update(p[1].to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Half squared distances `c_ij = d(x_i, y_j)²/2`, assembled in parallel over
/// rows. Deterministic regardless of thread count.
pub fn assemble(solver: &DistanceSolver<'_>, sources: &[Vec2], targets: &[Vec2]) -> Result<CostMatrix> {
    let rows: Vec<Vec<f64>> = sources
        .par_iter()
        .map(|x| {
            targets
                .iter()
                .map(|y| solver.distance(*x, *y).map(|d| 0.5 * d.value * d.value))
                .collect::<curvlab_core::Result<Vec<f64>>>()
        })
        .collect::<curvlab_core::Result<Vec<_>>>()?;
    Ok(CostMatrix::new(sources.len(), targets.len(), rows.concat())?)
}

pub struct CostCache {
    dir: PathBuf,
}

impl CostCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CostCache { dir: dir.into() }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("cost-{key}.csv"))
    }

    /// Cached matrix if present and intact; otherwise assemble and store.
    pub fn get_or_assemble(
        &self,
        metric_id: &str,
        solver: &DistanceSolver<'_>,
        sources: &[Vec2],
        targets: &[Vec2],
    ) -> Result<(CostMatrix, bool)> {
        let key = cache_key(metric_id, sources, targets);
        let path = self.path(&key);
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(c) = decode(&bytes, &key, &path) {
                if c.rows == sources.len() && c.cols == targets.len() {
                    return Ok((c, true));
                }
            }
        }
        let c = assemble(solver, sources, targets)?;
        fs::create_dir_all(&self.dir).map_err(|e| RunError::io(&self.dir, e))?;
        fs::write(&path, encode(&c, &key)).map_err(|e| RunError::io(&path, e))?;
        Ok((c, false))
    }
}

pub fn encode(c: &CostMatrix, key: &str) -> Vec<u8> {
    let mut out = format!(
        "{MAGIC}\n# key {key}\n# rows {} cols {}\ni,j,value,bits\n",
        c.rows, c.cols
    );
    for i in 0..c.rows {
        for j in 0..c.cols {
            let v = c.get(i, j);
            out.push_str(&format!("{i},{j},{},{:016x}\n", num(v), v.to_bits()));
        }
    }
    out.into_bytes()
}

pub fn decode(bytes: &[u8], key: &str, path: &Path) -> Result<CostMatrix> {
    let bad = |m: &str| RunError::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("unknown cache version"));
    }
    if lines.next() != Some(&format!("# key {key}")[..]) {
        return Err(bad("cache key mismatch"));
    }
    let dims: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("# rows "))
        .map(|l| l.split(" cols ").filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    if dims.len() != 2 {
        return Err(bad("missing dimensions"));
    }
    let (rows, cols) = (dims[0], dims[1]);
    lines.next();
    let mut values = vec![f64::NAN; rows * cols];
    let mut count = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("malformed row"));
        }
        let i: usize = f[0].parse().map_err(|_| bad("bad index"))?;
        let j: usize = f[1].parse().map_err(|_| bad("bad index"))?;
        let bits = u64::from_str_radix(f[3], 16).map_err(|_| bad("bad bits"))?;
        if i >= rows || j >= cols {
            return Err(bad("index out of range"));
        }
        values[i * cols + j] = f64::from_bits(bits);
        count += 1;
    }
    if count != rows * cols {
        return Err(bad("truncated cache file"));
    }
    Ok(CostMatrix::new(rows, cols, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use curvlab_core::geodesic::ShootingOptions;
    use curvlab_core::metric::Flat;

    #[test]
    fn second_lookup_hits_and_matches_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CostCache::new(dir.path());
        let solver = DistanceSolver::new(&Flat, ShootingOptions::default()).unwrap();
        let xs = [[0.1, 0.2], [0.9, 0.95]];
        let ys = [[0.5, 0.5], [0.0, 0.3], [1.0 / 3.0, 0.7]];
        let (a, hit_a) = cache.get_or_assemble("flat", &solver, &xs, &ys).unwrap();
        let (b, hit_b) = cache.get_or_assemble("flat", &solver, &xs, &ys).unwrap();
        assert!(!hit_a && hit_b);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(a.get(i, j).to_bits(), b.get(i, j).to_bits());
            }
        }
        // A different metric id is a different entry.
        let (_, hit_c) = cache.get_or_assemble("other", &solver, &xs, &ys).unwrap();
        assert!(!hit_c);
    }

    #[test]
    fn corrupted_file_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CostCache::new(dir.path());
        let solver = DistanceSolver::new(&Flat, ShootingOptions::default()).unwrap();
        let xs = [[0.1, 0.2]];
        let ys = [[0.5, 0.5]];
        cache.get_or_assemble("flat", &solver, &xs, &ys).unwrap();
        let key = cache_key("flat", &xs, &ys);
        fs::write(cache.path(&key), b"garbage").unwrap();
        let (c, hit) = cache.get_or_assemble("flat", &solver, &xs, &ys).unwrap();
        assert!(!hit);
        assert!((c.get(0, 0) - 0.5 * (0.16 + 0.09)).abs() < 1e-15);
    }
}
