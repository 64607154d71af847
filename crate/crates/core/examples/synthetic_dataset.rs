//! Imbalanced labeled / unlabeled splits with mismatched class profiles.
//!
//! cargo run --release --example synthetic_dataset -- [profile_u] [gamma_u]

use sage::data::{DatasetSpec, Profile};

fn main() -> sage::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut spec = DatasetSpec::default();
    if let Some(p) = args.next() {
        spec.profile_u = p.parse::<Profile>()?;
    }
    if let Some(g) = args.next() {
        spec.gamma_u = g.parse().expect("gamma_u");
    }
    let ds = spec.build(0)?;
    println!(
        "{} classes in {} dimensions; unlabeled profile {} with gamma {}",
        ds.classes, ds.input_dim, ds.profile_u, ds.gamma_u
    );
    let lab = ds.labeled.class_counts(ds.classes);
    let mut unl = vec![0; ds.classes];
    for &y in ds.unlabeled.y_hidden.reveal() {
        unl[y] += 1;
    }
    println!("class  labeled  unlabeled  test");
    let test = ds.test.class_counts(ds.classes);
    for c in 0..ds.classes {
        println!("{c:>5}  {:>7}  {:>9}  {:>4}", lab[c], unl[c], test[c]);
    }
    Ok(())
}
