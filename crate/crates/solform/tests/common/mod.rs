#![allow(dead_code)]

use solform::grid::Grid;
use solform::model::Model;
use solform::modulation::{Chart, ChartOptions};
use solform::soliton::{cubic_exact, potential_guess, solve_soliton, SolitonPoint, SolverOptions, Target};

pub fn potential_point(l: f64, n: usize, lambda: f64) -> (Model, SolitonPoint) {
    let g = Grid::new(l, n).unwrap();
    let m = Model::potential_well(&g);
    let amp = ((-4.0 - lambda) * 35.0 / 48.0).sqrt();
    let pt = solve_soliton(&m, &Target::Lambda(vec![lambda]), &potential_guess(&g, amp), SolverOptions::default())
        .unwrap();
    (m, pt)
}

pub fn potential_chart(l: f64, n: usize, lambda: f64) -> Chart {
    let (m, pt) = potential_point(l, n, lambda);
    Chart::build(&m, &pt, ChartOptions::default()).unwrap()
}

pub fn cubic_point(l: f64, n: usize) -> (Model, SolitonPoint) {
    let g = Grid::new(l, n).unwrap();
    let m = Model::cubic_nls(&g);
    let guess = cubic_exact(&g, &[-1.0, 0.0]);
    let pt = solve_soliton(&m, &Target::Lambda(vec![-1.0, 0.0]), &guess, SolverOptions::default()).unwrap();
    (m, pt)
}

pub fn cubic_chart(l: f64, n: usize, radius_fraction: f64) -> Chart {
    let (m, pt) = cubic_point(l, n);
    let opts = ChartOptions { radius_fraction, ..ChartOptions::default() };
    Chart::build(&m, &pt, opts).unwrap()
}
