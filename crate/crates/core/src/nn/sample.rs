use rand::Rng;

use super::NnError;

/// Nucleus sampling. `temperature == 0` selects the arg-max (lowest index on ties).
///
/// The kept set is the shortest prefix of tokens sorted by descending probability whose mass
/// reaches `p`; it always contains the top token.
pub fn sample_top_p(logits: &[f64], temperature: f64, p: f64, rng: &mut impl Rng) -> Result<usize, NnError> {
    if !(p > 0.0 && p <= 1.0) || temperature < 0.0 || !temperature.is_finite() {
        return Err(NnError::Sampling(format!("invalid temperature {temperature} / top-p {p}")));
    }
    let best = argmax(logits).ok_or_else(|| NnError::Sampling("all logits are -inf".into()))?;
    if temperature == 0.0 {
        return Ok(best);
    }
    let top = logits[best];
    let mut probs: Vec<(usize, f64)> = logits
        .iter()
        .enumerate()
        .filter(|(_, l)| **l > f64::NEG_INFINITY)
        .map(|(i, l)| (i, ((l - top) / temperature).exp()))
        .collect();
    let z: f64 = probs.iter().map(|x| x.1).sum();
    probs.iter_mut().for_each(|x| x.1 /= z);
    // stable sort keeps lower indices first among equal probabilities
    probs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut keep = 0;
    let mut mass = 0.0;
    while keep < probs.len() {
        mass += probs[keep].1;
        keep += 1;
        if mass >= p {
            break;
        }
    }
    let kept = &probs[..keep];
    let mut r = rng.random::<f64>() * mass;
    for &(i, q) in kept {
        if r < q {
            return Ok(i);
        }
        r -= q;
    }
    Ok(kept[keep - 1].0)
}

pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in x.iter().enumerate() {
        if *v > f64::NEG_INFINITY && best.is_none_or(|b| *v > x[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_top_p(&[0.0, 3.0, 1.0], 0.0, 0.98, &mut rng).unwrap(), 1);
        assert_eq!(sample_top_p(&[2.0, 2.0], 0.0, 0.98, &mut rng).unwrap(), 0);
    }

    #[test]
    fn dominant_token_is_certain() {
        // p(top) = 0.99 at temperature 1 with 10 tokens
        let other = (0.01f64 / 9.0).ln() - 0.99f64.ln();
        let mut logits = vec![other; 10];
        logits[4] = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            assert_eq!(sample_top_p(&logits, 1.0, 0.98, &mut rng).unwrap(), 4);
        }
    }

    #[test]
    fn uniform_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            counts[sample_top_p(&[0.0; 10], 1.0, 1.0, &mut rng).unwrap()] += 1;
        }
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn all_neg_inf_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_top_p(&[f64::NEG_INFINITY; 3], 0.6, 0.98, &mut rng).is_err());
    }
}
