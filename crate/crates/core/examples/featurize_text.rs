// Hashed bag-of-words features: unigrams and bigrams, signed buckets, unit norm.
//
// `cargo run --example featurize_text -- "a surprisingly good movie"`

use ust::features::{tokenize, Featurizer};

pub fn run_example(texts: &[&str], dim: usize) -> ust::Result<Vec<(usize, f64)>> {
    let featurizer = Featurizer::new(dim);
    let mut stats = Vec::new();
    for text in texts {
        let v = featurizer.featurize(text);
        println!("{text:?}");
        println!("  tokens: {:?}", tokenize(text));
        println!("  nnz {} of {}, l2 norm {:.6}", v.nnz(), v.dim(), v.norm());
        for (index, value) in v.entries().iter().take(6) {
            println!("    [{index:>6}] {value:+.4}");
        }
        stats.push((v.nnz(), v.norm()));
    }
    Ok(stats)
}

fn main() -> ust::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let texts: Vec<&str> = if args.is_empty() {
        vec!["a surprisingly good movie", "good movie", "movie good", ""]
    } else {
        args.iter().map(String::as_str).collect()
    };
    run_example(&texts, ust::data::DEFAULT_DIM)?;
    Ok(())
}
