use crate::geom::{NearestIndex, Point};

/// Result of layer-wise clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id per point of every layer; `-1` marks discarded points.
    pub labels: Vec<Vec<i64>>,
    /// Centroid of every cluster, indexed by cluster id.
    pub centroids: Vec<Point>,
    /// Number of members of every cluster.
    pub sizes: Vec<usize>,
}

/// Iterative layer-by-layer clustering.
///
/// The first layer seeds one cluster per point. Each later point joins its
/// nearest centroid when it is within `d_max`; when several points of a layer
/// compete for the same cluster only the closest joins (lowest index on ties)
/// and the rest are discarded. Points farther than `d_max` from every centroid
/// open new clusters. Centroids are recomputed after each layer.
pub fn cluster_layers(layers: &[Vec<Point>], d_max: f64) -> Clustering {
    let mut labels: Vec<Vec<i64>> = Vec::with_capacity(layers.len());
    let mut sums: Vec<Point> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut centroids: Vec<Point> = Vec::new();

    for layer in layers {
        let index = NearestIndex::new(&centroids);
        let nearest: Vec<Option<(usize, f64)>> = layer.iter().map(|p| index.nearest(p)).collect();

        // Closest candidate per cluster: (point index, distance).
        let mut winner: Vec<Option<(usize, f64)>> = vec![None; centroids.len()];
        for (i, nn) in nearest.iter().enumerate() {
            if let Some((c, d)) = *nn {
                if d <= d_max && winner[c].map_or(true, |(_, wd)| d < wd) {
                    winner[c] = Some((i, d));
                }
            }
        }

        let mut layer_labels = vec![-1i64; layer.len()];
        for (c, w) in winner.iter().enumerate() {
            if let Some((i, _)) = *w {
                layer_labels[i] = c as i64;
            }
        }
        for (i, nn) in nearest.iter().enumerate() {
            let open_new = match *nn {
                None => true,
                Some((_, d)) => d > d_max,
            };
            if open_new {
                layer_labels[i] = sums.len() as i64;
                sums.push(Point::zeros());
                sizes.push(0);
            }
        }

        for (p, &l) in layer.iter().zip(&layer_labels) {
            if l >= 0 {
                sums[l as usize] += p;
                sizes[l as usize] += 1;
            }
        }
        centroids = sums
            .iter()
            .zip(&sizes)
            .map(|(s, &n)| s / n as f64)
            .collect();
        labels.push(layer_labels);
    }
    Clustering {
        labels,
        centroids,
        sizes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point;
    use proptest::prelude::*;

    #[test]
    fn identical_layers() {
        let layer = vec![point(0.0, 0.0), point(1.0, 0.0), point(0.0, 1.0)];
        let c = cluster_layers(&[layer.clone(), layer.clone(), layer.clone()], 0.1);
        assert_eq!(c.centroids, layer);
        assert_eq!(c.sizes, vec![3, 3, 3]);
        assert!(c.labels.iter().all(|l| l == &vec![0, 1, 2]));
    }

    #[test]
    fn jittered_pairs_meet_halfway() {
        let a = vec![point(0.0, 0.0), point(0.5, 0.0)];
        let b = vec![point(0.51, 0.0), point(0.0, 0.01)];
        let c = cluster_layers(&[a, b], 0.05);
        assert_eq!(c.labels[1], vec![1, 0]);
        assert!((c.centroids[0] - point(0.0, 0.005)).norm() < 1e-15);
        assert!((c.centroids[1] - point(0.505, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn competing_candidates_keep_closest() {
        let a = vec![point(0.0, 0.0)];
        let b = vec![point(0.04, 0.0), point(0.0, 0.02)];
        let c = cluster_layers(&[a, b], 0.05);
        assert_eq!(c.labels[1], vec![-1, 0]);
        assert_eq!(c.sizes, vec![2]);
    }

    #[test]
    fn equal_distance_tie_goes_to_lower_index() {
        let c = cluster_layers(&[vec![point(0.0, 0.0)], vec![point(0.03, 0.0), point(-0.03, 0.0)]], 0.05);
        assert_eq!(c.labels[1], vec![0, -1]);
    }

    #[test]
    fn far_points_open_new_clusters() {
        let c = cluster_layers(&[vec![point(0.0, 0.0)], vec![point(1.0, 0.0), point(0.01, 0.0)]], 0.05);
        assert_eq!(c.labels[1], vec![1, 0]);
        assert_eq!(c.centroids.len(), 2);
    }

    proptest! {
        #[test]
        fn at_most_one_member_per_layer(
            layers in prop::collection::vec(
                prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 0..40), 1..6),
            d_max in 0.01f64..0.5,
        ) {
            let layers: Vec<Vec<Point>> = layers
                .into_iter()
                .map(|l| l.into_iter().map(|(x, y)| point(x, y)).collect())
                .collect();
            let c = cluster_layers(&layers, d_max);
            for l in &c.labels {
                let mut seen: Vec<i64> = l.iter().copied().filter(|&v| v >= 0).collect();
                let n = seen.len();
                seen.sort_unstable();
                seen.dedup();
                prop_assert_eq!(seen.len(), n);
            }
            let total: usize = c.labels.iter().flatten().filter(|&&v| v >= 0).count();
            prop_assert_eq!(total, c.sizes.iter().sum::<usize>());
            prop_assert_eq!(cluster_layers(&layers, d_max), c);
        }
    }
}
