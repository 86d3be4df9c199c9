//! Single-file cache bundle: magic, format version, a JSON metadata header, then every
//! array as little-endian `f64`. Floats round-trip bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::GridSolution;
use crate::wavelets::{daubechies_filter, DyadicFunction, Scale, WaveletBasis};

use super::{CacheGrid, CacheMode, DiffusionletCache};

const MAGIC: &[u8; 8] = b"DLETCACH";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    lambda: f64,
    sigma: f64,
    tau_max: f64,
    order: usize,
    grid: CacheGrid,
    mode: CacheMode,
    father_support: (f64, f64),
    mother_support: (f64, f64),
    basis_resolution: u32,
    exact_keys: Vec<(Scale, i64)>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn floats(&mut self, values: &[f64]) -> Result<()> {
        self.u64(values.len() as u64)?;
        for v in values {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn surface(&mut self, s: &GridSolution) -> Result<()> {
        self.floats(&s.tau_grid)?;
        self.floats(&s.x_grid)?;
        for row in &s.values {
            self.floats(row)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > 1 << 34 {
            return Err(Error::Format(format!("implausible array length {n}")));
        }
        let mut bytes = vec![0u8; n * 8];
        self.0.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn surface(&mut self) -> Result<GridSolution> {
        let tau_grid = self.floats()?;
        let x_grid = self.floats()?;
        let values = (0..tau_grid.len())
            .map(|_| {
                let row = self.floats()?;
                if row.len() != x_grid.len() {
                    return Err(Error::Format("surface row length mismatch".into()));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(GridSolution {
            tau_grid,
            x_grid,
            values,
        })
    }
}

pub fn write_cache(cache: &DiffusionletCache, out: impl Write) -> Result<()> {
    let header = Header {
        lambda: cache.lambda,
        sigma: cache.sigma,
        tau_max: cache.tau_max,
        order: cache.order(),
        grid: cache.grid.clone(),
        mode: cache.mode.clone(),
        father_support: cache.basis.father.support,
        mother_support: cache.basis.mother.support,
        basis_resolution: cache.basis.resolution(),
        exact_keys: cache.exact_surfaces.keys().copied().collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = Writer(out);
    w.0.write_all(MAGIC)?;
    w.0.write_all(&VERSION.to_le_bytes())?;
    w.u64(json.len() as u64)?;
    w.0.write_all(&json)?;
    w.floats(&cache.basis.father.samples)?;
    w.floats(&cache.basis.mother.samples)?;
    w.surface(&cache.father_surface)?;
    w.surface(&cache.mother_surface)?;
    for surface in cache.exact_surfaces.values() {
        w.surface(surface)?;
    }
    Ok(())
}

pub fn read_cache(input: impl Read) -> Result<DiffusionletCache> {
    let mut r = Reader(input);
    let mut magic = [0u8; 8];
    r.0.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a diffusionlet cache file".into()));
    }
    let mut version = [0u8; 4];
    r.0.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}, expected {VERSION}")));
    }
    let len = r.u64()? as usize;
    let mut json = vec![0u8; len];
    r.0.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    let filter = daubechies_filter(header.order)?;
    let dyadic = |samples, support| DyadicFunction {
        samples,
        resolution: header.basis_resolution,
        support,
    };
    let father = dyadic(r.floats()?, header.father_support);
    let mother = dyadic(r.floats()?, header.mother_support);
    let father_surface = r.surface()?;
    let mother_surface = r.surface()?;
    let mut exact_surfaces = BTreeMap::new();
    for key in header.exact_keys {
        exact_surfaces.insert(key, r.surface()?);
    }
    Ok(DiffusionletCache {
        lambda: header.lambda,
        sigma: header.sigma,
        tau_max: header.tau_max,
        grid: header.grid,
        basis: WaveletBasis { filter, father, mother },
        father_surface,
        mother_surface,
        mode: header.mode,
        exact_surfaces,
    })
}

pub fn save_cache(cache: &DiffusionletCache, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_cache(cache, &mut file)?;
    Ok(file.flush()?)
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<DiffusionletCache> {
    read_cache(std::io::BufReader::new(std::fs::File::open(path)?))
}
