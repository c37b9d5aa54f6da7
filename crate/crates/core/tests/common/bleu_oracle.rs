//! Direct-formula BLEU, written without sharing code with the library.

/// Counts how often `gram` occurs in `words` as a contiguous run.
fn occurrences(words: &[&str], gram: &[&str]) -> usize {
    if gram.len() > words.len() {
        return 0;
    }
    (0..=words.len() - gram.len())
        .filter(|&i| &words[i..i + gram.len()] == gram)
        .count()
}

/// (clipped matches, candidate n-gram count) for one order.
pub fn modified_precision(cand: &[&str], reference: &[&str], n: usize) -> (f64, f64) {
    if cand.len() < n {
        return (0.0, 0.0);
    }
    let mut seen: Vec<&[&str]> = Vec::new();
    let mut clipped = 0usize;
    for i in 0..=cand.len() - n {
        let gram = &cand[i..i + n];
        if seen.contains(&gram) {
            continue;
        }
        seen.push(gram);
        clipped += occurrences(cand, gram).min(occurrences(reference, gram));
    }
    (clipped as f64, (cand.len() + 1 - n) as f64)
}

fn brevity(c: f64, r: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r / c).exp()
    }
}

/// Sentence BLEU-4: unigram precision raw, orders 2..4 add-one smoothed.
pub fn sentence(cand: &[&str], reference: &[&str]) -> f64 {
    let mut product = 1.0;
    for n in 1..=4 {
        let (m, t) = modified_precision(cand, reference, n);
        let p = if n == 1 {
            if t == 0.0 {
                0.0
            } else {
                m / t
            }
        } else {
            (m + 1.0) / (t + 1.0)
        };
        product *= p;
    }
    brevity(cand.len() as f64, reference.len() as f64) * product.powf(0.25)
}

/// Corpus BLEU-4 from pooled counts; orders no candidate reaches are skipped.
pub fn corpus(pairs: &[(Vec<&str>, Vec<&str>)]) -> f64 {
    let mut product = 1.0;
    let mut orders = 0;
    for n in 1..=4 {
        let (mut m, mut t) = (0.0, 0.0);
        for (c, r) in pairs {
            let (pm, pt) = modified_precision(c, r, n);
            m += pm;
            t += pt;
        }
        if t == 0.0 {
            continue;
        }
        product *= m / t;
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let c: usize = pairs.iter().map(|(c, _)| c.len()).sum();
    let r: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    brevity(c as f64, r as f64) * product.powf(1.0 / orders as f64)
}
