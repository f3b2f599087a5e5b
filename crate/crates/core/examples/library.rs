//! Computes the invariance proximity of span{1, x1, x2, x1^2} under the map
//! T(x) = (0.9 x1, 0.4 (sin x2 + x1^2) + 0.01 x2^2) on [-1, 1]^2.

use invprox::{
    Domain, DynamicsMap, Expr, FunctionVec, ProximityAnalysis, QuadratureSpace, Tolerances,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dynamics = DynamicsMap::parse(&["0.9*x1", "0.4*(sin(x2)+x1^2)+0.01*x2^2"])?;
    let atoms = ["1", "x1", "x2", "x1^2"]
        .iter()
        .map(|s| Expr::parse(s, 2))
        .collect::<Result<Vec<_>, _>>()?;
    let space = QuadratureSpace::new(Domain::cube(2, -1.0, 1.0)?, 20)?;

    let analysis =
        ProximityAnalysis::compute(&atoms, Some(&dynamics), &space, &Tolerances::default())?;
    println!("I_K(S)           = {:.6}", analysis.proximity());

    // The witness attains the worst-case relative error.
    let witness = analysis.witness()?;
    println!("witness coeffs   = {:?}", witness.coeffs);
    println!("E_K(witness)     = {:.6}", analysis.relative_error(&witness)?);

    // Any other element of S has a smaller relative error.
    let f = FunctionVec::new(vec![0.0, 1.0, 0.0, 0.0]);
    println!("E_K(x1)          = {:.3e}", analysis.relative_error(&f)?);
    Ok(())
}
