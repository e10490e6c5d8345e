//! Rectangular partitions of the image plane and per-region mean colors,
//! the conditioning signal of the cast corrector.
//!
//! Region order is part of the wire format: grids run row-major, the
//! five-region scheme lists the center patch first and then the four corner
//! patches (top-left, top-right, bottom-left, bottom-right).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::imaging::PlanarImage;
use crate::{Error, Result};

/// Axis-aligned rectangle, fully inside its image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    /// `4^k` regions in a `2^k` x `2^k` grid, `k` in 0..=4.
    Grid(u8),
    /// Five half-extent patches: center plus the four corners.
    FiveRegion,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::Grid(0),
        SchemeKind::Grid(1),
        SchemeKind::Grid(2),
        SchemeKind::Grid(3),
        SchemeKind::Grid(4),
        SchemeKind::FiveRegion,
    ];

    pub fn region_count(self) -> usize {
        match self {
            SchemeKind::Grid(k) => 1usize << (2 * k),
            SchemeKind::FiveRegion => 5,
        }
    }

    /// Length of the mean vector this scheme produces (3 per region).
    pub fn mean_len(self) -> usize {
        3 * self.region_count()
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Grid(k) => write!(f, "grid{k}"),
            SchemeKind::FiveRegion => write!(f, "five"),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "five" {
            return Ok(SchemeKind::FiveRegion);
        }
        if let Some(k) = s.strip_prefix("grid") {
            let k: u8 = k
                .parse()
                .map_err(|_| Error::Regions(format!("unknown scheme '{s}'")))?;
            if k > 4 {
                return Err(Error::Regions(format!(
                    "grid exponent {k} out of range 0..4"
                )));
            }
            return Ok(SchemeKind::Grid(k));
        }
        Err(Error::Regions(format!(
            "unknown scheme '{s}' (expected grid0..grid4 or five)"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionScheme {
    pub kind: SchemeKind,
    pub height: usize,
    pub width: usize,
    regions: Vec<Region>,
}

impl PartitionScheme {
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }
}

/// Split `len` into `n` spans whose extents differ by at most one pixel;
/// remainder pixels go to the trailing spans.
fn spans(len: usize, n: usize) -> Vec<(usize, usize)> {
    let base = len / n;
    let rem = len % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let extent = if i < n - rem { base } else { base + 1 };
        out.push((start, extent));
        start += extent;
    }
    out
}

pub fn build_partition(kind: SchemeKind, h: usize, w: usize) -> Result<PartitionScheme> {
    let regions = match kind {
        SchemeKind::Grid(k) => {
            if k > 4 {
                return Err(Error::Regions(format!("grid exponent {k} out of range 0..4")));
            }
            let n = 1usize << k;
            if h < n || w < n {
                return Err(Error::Regions(format!(
                    "image {h}x{w} too small for a {n}x{n} grid"
                )));
            }
            let rows = spans(h, n);
            let cols = spans(w, n);
            let mut regions = Vec::with_capacity(n * n);
            for &(y0, rh) in &rows {
                for &(x0, rw) in &cols {
                    regions.push(Region { x0, y0, w: rw, h: rh });
                }
            }
            regions
        }
        SchemeKind::FiveRegion => {
            if h < 2 || w < 2 {
                return Err(Error::Regions(format!(
                    "image {h}x{w} too small for the five-region scheme"
                )));
            }
            let (ph, pw) = (h / 2, w / 2);
            let (ly, lx) = (h - ph, w - pw); // bottom/right anchor
            vec![
                Region { x0: (w - pw) / 2, y0: (h - ph) / 2, w: pw, h: ph }, // center
                Region { x0: 0, y0: 0, w: pw, h: ph },                      // top-left
                Region { x0: lx, y0: 0, w: pw, h: ph },                     // top-right
                Region { x0: 0, y0: ly, w: pw, h: ph },                     // bottom-left
                Region { x0: lx, y0: ly, w: pw, h: ph },                    // bottom-right
            ]
        }
    };
    Ok(PartitionScheme { kind, height: h, width: w, regions })
}

/// Per-region RGB means in [0, 1], region-major then R,G,B.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector {
    pub kind: SchemeKind,
    values: Vec<f32>,
}

impl MeanVector {
    pub fn new(kind: SchemeKind, values: Vec<f32>) -> Result<Self> {
        if values.len() != kind.mean_len() {
            return Err(Error::Regions(format!(
                "mean vector for {kind} needs {} values, got {}",
                kind.mean_len(),
                values.len()
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn region_mean(&self, region_index: usize) -> [f32; 3] {
        let v = &self.values[3 * region_index..3 * region_index + 3];
        [v[0], v[1], v[2]]
    }

    pub fn to_json(&self) -> String {
        let wire = MeanVectorWire {
            scheme: self.kind.to_string(),
            means: self.values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        };
        serde_json::to_string_pretty(&wire).expect("wire form always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: MeanVectorWire = serde_json::from_str(text)?;
        let kind: SchemeKind = wire.scheme.parse()?;
        let values: Vec<f32> = wire.means.iter().flat_map(|c| c.iter().copied()).collect();
        Self::new(kind, values)
    }
}

#[derive(Serialize, Deserialize)]
struct MeanVectorWire {
    scheme: String,
    means: Vec<[f32; 3]>,
}

/// Arithmetic mean color of every region of `scheme`, in region order.
pub fn extract_means(img: &PlanarImage, scheme: &PartitionScheme) -> Result<MeanVector> {
    if img.channels() != 3 {
        return Err(Error::Regions("extract_means expects a 3-channel image".into()));
    }
    if img.band_domain() {
        return Err(Error::Regions("extract_means expects a natural-domain image".into()));
    }
    if img.height() != scheme.height || img.width() != scheme.width {
        return Err(Error::Regions(format!(
            "scheme built for {}x{}, image is {}x{}",
            scheme.height,
            scheme.width,
            img.height(),
            img.width()
        )));
    }
    let mut values = Vec::with_capacity(scheme.regions.len() * 3);
    for region in &scheme.regions {
        for c in 0..3 {
            let mut acc = 0.0f64;
            for y in region.y0..region.y0 + region.h {
                for x in region.x0..region.x0 + region.w {
                    acc += img.sample(c, y, x) as f64;
                }
            }
            values.push((acc / (region.w * region.h) as f64) as f32);
        }
    }
    MeanVector::new(scheme.kind, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Four constant quadrants with distinct colors per quadrant.
    fn quadrant_image(size: usize) -> (PlanarImage, [[f32; 3]; 4]) {
        let colors = [
            [0.1, 0.2, 0.3],
            [0.9, 0.1, 0.5],
            [0.3, 0.8, 0.2],
            [0.6, 0.4, 0.7],
        ];
        let mut img = PlanarImage::zeros(3, size, size);
        let half = size / 2;
        for y in 0..size {
            for x in 0..size {
                let q = (y >= half) as usize * 2 + (x >= half) as usize;
                for c in 0..3 {
                    img.set_sample(c, y, x, colors[q][c]);
                }
            }
        }
        (img, colors)
    }

    #[test]
    fn grid0_covers_the_whole_image() {
        let p = build_partition(SchemeKind::Grid(0), 64, 64).unwrap();
        assert_eq!(p.regions(), &[Region { x0: 0, y0: 0, w: 64, h: 64 }]);
    }

    #[test]
    fn grid4_has_256_regions_tiling_exactly() {
        for (h, w) in [(64, 64), (67, 53)] {
            let p = build_partition(SchemeKind::Grid(4), h, w).unwrap();
            assert_eq!(p.regions().len(), 256);
            let mut covered = vec![0u8; h * w];
            for r in p.regions() {
                for y in r.y0..r.y0 + r.h {
                    for x in r.x0..r.x0 + r.w {
                        covered[y * w + x] += 1;
                    }
                }
            }
            assert!(covered.iter().all(|&c| c == 1), "{h}x{w} must tile exactly");
        }
    }

    #[test]
    fn five_region_geometry_on_64() {
        let p = build_partition(SchemeKind::FiveRegion, 64, 64).unwrap();
        let r = p.regions();
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|r| r.w == 32 && r.h == 32));
        assert_eq!(r[0], Region { x0: 16, y0: 16, w: 32, h: 32 });
        assert_eq!(r[1], Region { x0: 0, y0: 0, w: 32, h: 32 });
        assert_eq!(r[2], Region { x0: 32, y0: 0, w: 32, h: 32 });
        assert_eq!(r[3], Region { x0: 0, y0: 32, w: 32, h: 32 });
        assert_eq!(r[4], Region { x0: 32, y0: 32, w: 32, h: 32 });
    }

    #[test]
    fn too_small_images_are_rejected() {
        assert!(build_partition(SchemeKind::Grid(4), 8, 64).is_err());
        assert!(build_partition(SchemeKind::FiveRegion, 1, 64).is_err());
    }

    #[test]
    fn constant_image_means_are_the_constant() {
        let img = PlanarImage::constant(3, 32, 32, 0.42);
        for kind in SchemeKind::ALL {
            let scheme = build_partition(kind, 32, 32).unwrap();
            let means = extract_means(&img, &scheme).unwrap();
            assert_eq!(means.len(), kind.mean_len());
            assert!(means.values().iter().all(|&v| (v - 0.42).abs() < 1e-6));
        }
    }

    #[test]
    fn quadrant_image_means_under_grid1_and_five() {
        let (img, colors) = quadrant_image(64);
        let grid1 = build_partition(SchemeKind::Grid(1), 64, 64).unwrap();
        let means = extract_means(&img, &grid1).unwrap();
        for q in 0..4 {
            assert_eq!(means.region_mean(q), colors[q], "grid quadrant {q}");
        }

        let five = build_partition(SchemeKind::FiveRegion, 64, 64).unwrap();
        let means = extract_means(&img, &five).unwrap();
        // corners coincide with the quadrants
        for q in 0..4 {
            assert_eq!(means.region_mean(1 + q), colors[q], "corner {q}");
        }
        // the centered patch straddles all four quadrants equally
        for c in 0..3 {
            let expect = (colors[0][c] + colors[1][c] + colors[2][c] + colors[3][c]) / 4.0;
            assert!((means.region_mean(0)[c] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_means_aggregate_to_the_global_mean() {
        let (img, _) = quadrant_image(48);
        let global = extract_means(&img, &build_partition(SchemeKind::Grid(0), 48, 48).unwrap())
            .unwrap();
        for k in 1..=4u8 {
            let scheme = build_partition(SchemeKind::Grid(k), 48, 48).unwrap();
            let means = extract_means(&img, &scheme).unwrap();
            for c in 0..3 {
                let mut acc = 0.0f64;
                let mut area = 0.0f64;
                for (i, r) in scheme.regions().iter().enumerate() {
                    acc += means.region_mean(i)[c] as f64 * (r.w * r.h) as f64;
                    area += (r.w * r.h) as f64;
                }
                assert!(
                    ((acc / area) - global.values()[c] as f64).abs() < 1e-6,
                    "grid{k} channel {c}"
                );
            }
        }
    }

    #[test]
    fn scheme_kind_parses_and_rejects() {
        assert_eq!("grid2".parse::<SchemeKind>().unwrap(), SchemeKind::Grid(2));
        assert_eq!("five".parse::<SchemeKind>().unwrap(), SchemeKind::FiveRegion);
        let err = "grid9".parse::<SchemeKind>().unwrap_err();
        assert!(err.to_string().contains("out of range"));
        assert!("blobs".parse::<SchemeKind>().is_err());
    }

    #[test]
    fn mean_vector_json_round_trip() {
        let (img, _) = quadrant_image(32);
        let scheme = build_partition(SchemeKind::Grid(1), 32, 32).unwrap();
        let means = extract_means(&img, &scheme).unwrap();
        let text = means.to_json();
        assert!(text.contains("\"grid1\""));
        let back = MeanVector::from_json(&text).unwrap();
        assert_eq!(means, back);
    }
}
