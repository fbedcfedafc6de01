use crate::raster::Mask;

/// 8-connected components of the set pixels, each as a list of `(y, x)`.
pub fn connected_components(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            comp.push((y, x));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Split a union lane mask into `(left, right)`: components whose mean
/// column lies left of the image centre go to the left mask.
pub fn split_lanes(union: &Mask) -> (Mask, Mask) {
    let center = (union.width as f64 - 1.0) / 2.0;
    let mut left = Mask::new(union.height, union.width);
    let mut right = Mask::new(union.height, union.width);
    for comp in connected_components(union) {
        let mean = comp.iter().map(|&(_, x)| x as f64).sum::<f64>() / comp.len() as f64;
        let target = if mean < center { &mut left } else { &mut right };
        for (y, x) in comp {
            target.set(y, x, 1);
        }
    }
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_lines_split_by_side() {
        let mut m = Mask::new(6, 10);
        for y in 0..6 {
            m.set(y, 1 + y / 3, 1);
            m.set(y, 8, 1);
        }
        let (l, r) = split_lanes(&m);
        assert_eq!(l.count(), 6);
        assert_eq!(r.count(), 6);
        assert_eq!(r.get(0, 8), 1);
        assert_eq!(l.or(&r).unwrap(), m);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let m = Mask::from_vec(3, 3, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(connected_components(&m).len(), 1);
    }
}
