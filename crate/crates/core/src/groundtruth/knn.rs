/// Mean Euclidean distance from point `i` to its `k` nearest other points
/// (all others when fewer exist). `None` when `i` has no other point.
pub fn knn_mean_distance(points: &[(f64, f64)], i: usize, k: usize) -> Option<f64> {
    if points.len() < 2 || k == 0 {
        return None;
    }
    let (xi, yi) = points[i];
    let k = k.min(points.len() - 1);
    // Ascending k smallest distances, maintained by insertion.
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for (j, &(x, y)) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        let (dx, dy) = (x - xi, y - yi);
        let d = (dx * dx + dy * dy).sqrt();
        if best.len() == k && d >= best[k - 1] {
            continue;
        }
        let pos = best.partition_point(|&b| b <= d);
        best.insert(pos, d);
        best.truncate(k);
    }
    Some(best.iter().sum::<f64>() / k as f64)
}
