//! Integer factorization helpers: prime signatures and ordered
//! factorizations ("compositions") of a loop extent across positions.

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;

/// `(prime, exponent)` pairs in ascending prime order.
pub fn prime_factors(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n.is_multiple_of(p) {
            let mut e = 0;
            while n.is_multiple_of(p) {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

/// Primes with multiplicity, ascending.
pub fn prime_list(n: u64) -> Vec<u64> {
    prime_factors(n)
        .into_iter()
        .flat_map(|(p, e)| std::iter::repeat_n(p, e as usize))
        .collect()
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::ZERO;
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Number of ordered `parts`-tuples of positive integers whose product is `n`.
pub fn composition_count(n: u64, parts: usize) -> BigUint {
    if parts == 0 {
        return BigUint::from((n == 1) as u32);
    }
    prime_factors(n)
        .into_iter()
        .map(|(_, e)| binomial(e as u64 + parts as u64 - 1, parts as u64 - 1))
        .product()
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            small.push(i);
            if i != n / i {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Every ordered factorization of `n` into `parts` positive factors, in
/// lexicographic order of the factor tuples.
pub fn compositions(n: u64, parts: usize) -> Vec<Vec<u64>> {
    fn go(n: u64, parts: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if parts == 1 {
            prefix.push(n);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for d in divisors(n) {
            prefix.push(d);
            go(n / d, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts == 0 {
        if n == 1 {
            out.push(Vec::new());
        }
        return out;
    }
    go(n, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Uniform sample over ordered factorizations: each prime's exponent is
/// split by a uniform stars-and-bars draw, independently per prime.
pub fn sample_composition<R: Rng + ?Sized>(n: u64, parts: usize, rng: &mut R) -> Vec<u64> {
    let mut out = vec![1u64; parts];
    for (p, e) in prime_factors(n) {
        let e = e as usize;
        let slots = e + parts - 1;
        let mut idx: Vec<usize> = (0..slots).collect();
        idx.shuffle(rng);
        let mut bars = idx[..parts - 1].to_vec();
        bars.sort_unstable();
        // stars before the first bar go to part 0, between bars i-1 and i to part i
        let mut prev = 0usize;
        for (i, &b) in bars.iter().enumerate() {
            let stars = b - prev;
            out[i] *= p.pow(stars as u32);
            prev = b + 1;
        }
        out[parts - 1] *= p.pow((slots - prev) as u32);
    }
    out
}

/// All orderings of `items`, lexicographic in item position.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn brute_force_count(n: u64, parts: usize) -> u64 {
        // every tuple in [1, n]^parts with product n
        fn go(n: u64, parts: usize, rem: u64) -> u64 {
            if parts == 0 {
                return (rem == 1) as u64;
            }
            (1..=n).filter(|f| rem.is_multiple_of(*f)).map(|f| go(n, parts - 1, rem / f)).sum()
        }
        go(n, parts, n)
    }

    #[test]
    fn factorization() {
        assert_eq!(prime_factors(1), vec![]);
        assert_eq!(prime_factors(96), vec![(2, 5), (3, 1)]);
        assert_eq!(prime_factors(97), vec![(97, 1)]);
        assert_eq!(prime_list(12), vec![2, 2, 3]);
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(&[]), vec![Vec::<usize>::new()]);
        assert_eq!(permutations(&[3, 1, 4]).len(), 6);
        assert_eq!(permutations(&[0, 1, 2, 3, 4, 5, 6]).len(), 5040);
    }

    #[test]
    fn extent_eight_into_five_positions() {
        assert_eq!(composition_count(8, 5), BigUint::from(35u32));
        assert_eq!(brute_force_count(8, 5), 35);
        assert_eq!(compositions(8, 5).len(), 35);
    }

    #[test]
    fn counts_match_brute_force() {
        for n in 1..=16 {
            for parts in 1..=4 {
                let bf = brute_force_count(n, parts);
                assert_eq!(composition_count(n, parts), BigUint::from(bf), "n={n} parts={parts}");
                let all = compositions(n, parts);
                assert_eq!(all.len() as u64, bf);
                assert!(all.iter().all(|c| c.iter().product::<u64>() == n));
            }
        }
    }

    #[test]
    fn sampling_is_uniform_enough() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hist: HashMap<Vec<u64>, usize> = HashMap::new();
        let draws = 35_000;
        for _ in 0..draws {
            let c = sample_composition(8, 5, &mut rng);
            assert_eq!(c.iter().product::<u64>(), 8);
            *hist.entry(c).or_default() += 1;
        }
        assert_eq!(hist.len(), 35);
        for (k, v) in hist {
            assert!((700..1300).contains(&v), "{k:?} drawn {v} times");
        }
    }
}
