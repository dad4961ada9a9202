use super::{ReconImage, Sinogram, SinogramMode};
use crate::par::Exec;
use crate::{Error, Result};

pub fn reconstruct_fbp(sino: &Sinogram) -> Result<ReconImage> {
    reconstruct_fbp_with(sino, Exec::default())
}

/// Ram-Lak kernel sampled at integer detector offsets.
fn ramp_kernel(k: isize, spacing: f64) -> f64 {
    if k == 0 {
        1.0 / (4.0 * spacing * spacing)
    } else if k % 2 == 0 {
        0.0
    } else {
        let kf = k as f64;
        -1.0 / (std::f64::consts::PI.powi(2) * kf * kf * spacing * spacing)
    }
}

fn filter_row(row: &[f64], spacing: f64) -> Vec<f64> {
    let n = row.len() as isize;
    (0..n)
        .map(|j| (0..n).map(|k| ramp_kernel(j - k, spacing) * row[k as usize]).sum::<f64>() * spacing)
        .collect()
}

/// Filtered back-projection onto a `T x T` grid covering the field of view.
///
/// Masked entries are zero in the filtered rows and excluded from the
/// interpolation weights; each pixel's sum is rescaled by the ratio of
/// possible to valid weight. Pixels outside the inscribed circle of the field
/// of view are not reconstructable and set to 0.
pub fn reconstruct_fbp_with(sino: &Sinogram, exec: Exec) -> Result<ReconImage> {
    if sino.mode != SinogramMode::Attenuation {
        return Err(Error::InvalidParameter(
            "back-projection needs an attenuation-mode sinogram".into(),
        ));
    }
    if sino.valid_count() == 0 {
        return Err(Error::EmptyData);
    }
    let g = &sino.geometry;
    let n = g.translations;
    let fov = g.field_of_view;
    let ds = g.translation_spacing();
    let px = fov / n as f64;
    let centre = |i: usize| (i as f64 + 0.5) * px - fov / 2.0;
    let s0 = g.translation_offset(0);

    // per angle: (value sum, possible weight, valid weight) per pixel
    let partial = exec.map(g.rotations, |r| {
        let row: Vec<f64> = (0..n)
            .map(|j| if sino.is_valid(r, j) { sino.value(r, j) } else { 0.0 })
            .collect();
        let q = filter_row(&row, ds);
        let (sin, cos) = g.angle(r).sin_cos();
        let mut acc = vec![[0.0f64; 3]; n * n];
        for pr in 0..n {
            for pc in 0..n {
                let s = centre(pc) * cos + centre(pr) * sin;
                let f = (s - s0) / ds;
                let i0 = f.floor();
                let a = f - i0;
                let cell = &mut acc[pr * n + pc];
                for (idx, w) in [(i0 as isize, 1.0 - a), (i0 as isize + 1, a)] {
                    if idx < 0 || idx >= n as isize {
                        continue;
                    }
                    cell[1] += w;
                    if sino.is_valid(r, idx as usize) {
                        cell[0] += w * q[idx as usize];
                        cell[2] += w;
                    }
                }
            }
        }
        acc
    });
    let mut total = vec![[0.0f64; 3]; n * n];
    for acc in &partial {
        for (t, a) in total.iter_mut().zip(acc) {
            t[0] += a[0];
            t[1] += a[1];
            t[2] += a[2];
        }
    }
    let scale = std::f64::consts::PI / g.rotations as f64;
    let pixels = (0..n * n)
        .map(|k| {
            let (pr, pc) = (k / n, k % n);
            let [sum, possible, valid] = total[k];
            if centre(pc).hypot(centre(pr)) > fov / 2.0 || valid <= 0.0 {
                0.0
            } else {
                sum * (possible / valid) * scale
            }
        })
        .collect();
    ReconImage::raw(pixels, n)
}
