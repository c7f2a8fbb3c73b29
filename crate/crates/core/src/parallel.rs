//! Thread fan-out that preserves result order.
//!
//! Work is split into contiguous chunks over scoped threads and results are
//! reassembled by index, so outputs are bitwise identical for any thread
//! count — parallelism changes scheduling, never reduction order.

/// Apply `f` to every item, optionally across `threads` OS threads.
/// Results come back in item order.
pub fn par_map<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut slots: Vec<Option<R>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    std::thread::scope(|scope| {
        let f = &f;
        let mut pending = Vec::new();
        for (ci, (islice, oslice)) in items
            .chunks(chunk)
            .zip(slots.chunks_mut(chunk))
            .enumerate()
        {
            let base = ci * chunk;
            pending.push(scope.spawn(move || {
                for (k, (item, slot)) in islice.iter().zip(oslice.iter_mut()).enumerate() {
                    *slot = Some(f(base + k, item));
                }
            }));
        }
        for handle in pending {
            handle.join().expect("worker thread panicked");
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_for_any_thread_count() {
        let items: Vec<usize> = (0..37).collect();
        let expect: Vec<usize> = items.iter().map(|&v| v * v + 1).collect();
        for threads in [0, 1, 2, 3, 8, 64] {
            let got = par_map(threads, &items, |i, &v| {
                assert_eq!(i, v);
                v * v + 1
            });
            assert_eq!(got, expect, "threads={threads}");
        }
    }

    #[test]
    fn empty_and_singleton_inputs() {
        let none: Vec<u8> = vec![];
        assert!(par_map(4, &none, |_, &v| v).is_empty());
        assert_eq!(par_map(4, &[5u8], |_, &v| v + 1), vec![6]);
    }

    #[test]
    fn results_identical_across_thread_counts_for_float_reductions() {
        // The guarantee that matters: floating-point outputs do not depend
        // on the thread count because each item is reduced independently.
        let items: Vec<f64> = (0..101).map(|i| (i as f64).sin()).collect();
        let seq = par_map(1, &items, |i, &v| (v * 1.7 + i as f64).exp().sqrt());
        let par = par_map(7, &items, |i, &v| (v * 1.7 + i as f64).exp().sqrt());
        assert_eq!(seq, par);
    }
}
