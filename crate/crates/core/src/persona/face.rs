//! Human-face filter: the mock-image marker shortcut, else a multi-block LBP
//! cascade detector (OpenCV frontal-face model, shipped as JSON data).

use std::sync::OnceLock;

use serde::Deserialize;

use crate::backends::mock::read_face_marker;

const CASCADE_JSON: &str = include_str!("../../data/lbp_frontalface.json");

/// Detector parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Images are downscaled so their longer side is at most this many pixels.
    pub max_side: u32,
    pub scale_factor: f32,
    /// Detections in a cluster must exceed this count to be reported.
    pub min_neighbors: usize,
    pub group_eps: f32,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            max_side: 256,
            scale_factor: 1.1,
            min_neighbors: 3,
            group_eps: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Deserialize)]
struct CascadeFile {
    window_width: u32,
    window_height: u32,
    stages: Vec<Stage>,
    features: Vec<[u32; 4]>,
}

#[derive(Deserialize)]
struct Stage {
    threshold: f32,
    weak: Vec<Weak>,
}

#[derive(Deserialize)]
struct Weak {
    feature: usize,
    subset: [u32; 8],
    leaves: [f32; 2],
}

fn cascade() -> &'static CascadeFile {
    static CASCADE: OnceLock<CascadeFile> = OnceLock::new();
    CASCADE.get_or_init(|| serde_json::from_str(CASCADE_JSON).expect("shipped cascade parses"))
}

/// Summed-area table with a zero row and column in front.
struct Integral {
    stride: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(gray: &image::GrayImage) -> Self {
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += gray.get_pixel(x as u32, y as u32)[0] as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Integral { stride, sums }
    }

    fn rect(&self, x: usize, y: usize, w: usize, h: usize) -> u32 {
        let s = self.stride;
        self.sums[(y + h) * s + x + w] + self.sums[y * s + x]
            - self.sums[y * s + x + w]
            - self.sums[(y + h) * s + x]
    }
}

fn lbp_code(ii: &Integral, x: usize, y: usize, f: [u32; 4]) -> u32 {
    let (fx, fy, w, h) = (f[0] as usize + x, f[1] as usize + y, f[2] as usize, f[3] as usize);
    let block = |c: usize, r: usize| ii.rect(fx + c * w, fy + r * h, w, h);
    let center = block(1, 1);
    // Clockwise from the top-left neighbour, most significant bit first.
    let ring = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
    ring.iter().fold(0, |code, &(c, r)| {
        (code << 1) | u32::from(block(c, r) >= center)
    })
}

fn window_passes(c: &CascadeFile, ii: &Integral, x: usize, y: usize) -> bool {
    c.stages.iter().all(|stage| {
        let sum: f32 = stage
            .weak
            .iter()
            .map(|weak| {
                let code = lbp_code(ii, x, y, c.features[weak.feature]);
                if weak.subset[(code >> 5) as usize] & (1 << (code & 31)) != 0 {
                    weak.leaves[0]
                } else {
                    weak.leaves[1]
                }
            })
            .sum();
        sum >= stage.threshold - 1e-5
    })
}

/// Face rectangles in the coordinates of `img`.
pub fn detect_faces(img: &image::DynamicImage, params: &DetectorParams) -> Vec<Rect> {
    let c = cascade();
    let gray = img.to_luma8();
    let longest = gray.width().max(gray.height());
    let (gray, to_orig) = if longest > params.max_side {
        let k = params.max_side as f32 / longest as f32;
        let w = ((gray.width() as f32 * k).round() as u32).max(1);
        let h = ((gray.height() as f32 * k).round() as u32).max(1);
        let small = image::imageops::resize(&gray, w, h, image::imageops::FilterType::Triangle);
        (small, 1.0 / k)
    } else {
        (gray, 1.0)
    };

    let mut hits = Vec::new();
    let mut factor = 1.0f32;
    loop {
        let sw = (gray.width() as f32 / factor).round() as u32;
        let sh = (gray.height() as f32 / factor).round() as u32;
        if sw < c.window_width || sh < c.window_height {
            break;
        }
        let scaled = if factor == 1.0 {
            gray.clone()
        } else {
            image::imageops::resize(&gray, sw, sh, image::imageops::FilterType::Triangle)
        };
        let ii = Integral::new(&scaled);
        let step = if factor > 2.0 { 1 } else { 2 };
        let ww = c.window_width as f32 * factor * to_orig;
        let wh = c.window_height as f32 * factor * to_orig;
        for y in (0..=(sh - c.window_height) as usize).step_by(step) {
            for x in (0..=(sw - c.window_width) as usize).step_by(step) {
                if window_passes(c, &ii, x, y) {
                    hits.push(Rect {
                        x: (x as f32 * factor * to_orig).round() as u32,
                        y: (y as f32 * factor * to_orig).round() as u32,
                        w: ww.round() as u32,
                        h: wh.round() as u32,
                    });
                }
            }
        }
        factor *= params.scale_factor;
    }
    group_rectangles(&hits, params.min_neighbors, params.group_eps)
}

fn similar(a: &Rect, b: &Rect, eps: f32) -> bool {
    let delta = eps * (a.w.min(b.w) + a.h.min(b.h)) as f32 * 0.5;
    let close = |p: u32, q: u32| (p as f32 - q as f32).abs() <= delta;
    close(a.x, b.x) && close(a.y, b.y) && close(a.x + a.w, b.x + b.w) && close(a.y + a.h, b.y + b.h)
}

/// Clusters overlapping detections; keeps clusters with more than
/// `min_neighbors` members, returning each cluster's mean rectangle.
pub fn group_rectangles(rects: &[Rect], min_neighbors: usize, eps: f32) -> Vec<Rect> {
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if similar(&rects[i], &rects[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b] = a;
                }
            }
        }
    }
    let mut clusters: std::collections::BTreeMap<usize, Vec<Rect>> = Default::default();
    for (i, r) in rects.iter().enumerate() {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(*r);
    }
    clusters
        .into_values()
        .filter(|members| members.len() > min_neighbors)
        .map(|members| {
            let k = members.len() as f32;
            let mean = |f: fn(&Rect) -> u32| (members.iter().map(|r| f(r) as f32).sum::<f32>() / k).round() as u32;
            Rect {
                x: mean(|r| r.x),
                y: mean(|r| r.y),
                w: mean(|r| r.w),
                h: mean(|r| r.h),
            }
        })
        .collect()
}

/// True iff the image depicts a human face. Undecodable bytes are rejected
/// with a warning.
pub fn face_filter(bytes: &[u8]) -> bool {
    if let Some(marked) = read_face_marker(bytes) {
        return marked;
    }
    match image::load_from_memory(bytes) {
        Ok(img) => !detect_faces(&img, &DetectorParams::default()).is_empty(),
        Err(e) => {
            tracing::warn!(error = %e, "face filter: undecodable image");
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cascade_data_is_consistent() {
        let c = cascade();
        assert_eq!((c.window_width, c.window_height), (24, 24));
        assert_eq!(c.stages.len(), 20);
        for stage in &c.stages {
            for weak in &stage.weak {
                let [x, y, w, h] = c.features[weak.feature];
                assert!(x + 3 * w <= 24 && y + 3 * h <= 24);
            }
        }
    }

    #[test]
    fn lbp_code_bit_order() {
        // 3x3 blocks of 1 px; only the top-left and left neighbours are brighter.
        let mut img = image::GrayImage::from_pixel(3, 3, image::Luma([10]));
        img.put_pixel(0, 0, image::Luma([200]));
        img.put_pixel(0, 1, image::Luma([200]));
        img.put_pixel(2, 2, image::Luma([0]));
        let ii = Integral::new(&img);
        // Equal neighbours count as set; only the bottom-right one is darker.
        assert_eq!(lbp_code(&ii, 0, 0, [0, 0, 1, 1]), 0b1111_0111);
    }

    #[test]
    fn grouping_needs_enough_neighbours() {
        let r = Rect { x: 10, y: 10, w: 24, h: 24 };
        let shifted = Rect { x: 11, ..r };
        assert!(group_rectangles(&[r, shifted, r], 3, 0.2).is_empty());
        let grouped = group_rectangles(&[r, shifted, r, shifted], 3, 0.2);
        assert_eq!(grouped.len(), 1);
        let far = Rect { x: 100, ..r };
        assert_eq!(group_rectangles(&[r, r, r, r, far], 3, 0.2).len(), 1);
    }

    #[test]
    fn marker_short_circuits_detector() {
        let rgb = vec![128u8; 32 * 32 * 3];
        let yes = crate::backends::mock::encode_png(&rgb, 32, 32, Some(true)).unwrap();
        let no = crate::backends::mock::encode_png(&rgb, 32, 32, Some(false)).unwrap();
        assert!(face_filter(&yes));
        assert!(!face_filter(&no));
        assert!(!face_filter(b"not an image"));
    }
}
