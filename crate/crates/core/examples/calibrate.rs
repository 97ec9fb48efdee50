use flowprob_core::monte_carlo::Method;
use flowprob_core::pipeline::*;
use flowprob_core::scenario::*;

fn load(p: &str) -> ScenarioFile {
    ScenarioFile::from_json(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn main() {
    let t0 = std::time::Instant::now();
    // gaslib
    let ScenarioFile::Stationary(s) = load("scenarios/gaslib11.json") else { panic!() };
    let scn = build_stationary(&s).unwrap();
    let det = deterministic_bounds_stationary(&scn).unwrap();
    println!("gaslib det: {det:?}  ({:?})", t0.elapsed());
    let out = estimate_stationary(&scn, &[Method::Kde, Method::Mc], 100_000, 7, None).unwrap();
    for e in &out.estimates {
        println!("gaslib {:?} at det bounds: {:.4}", e.method, e.value);
    }
    println!("elapsed {:?}", t0.elapsed());
    let opt = optimize_stationary(&scn, 0.75, 100_000, 7).unwrap();
    println!(
        "gaslib optimum: {:?} P={:.4} stat={:.2e} comp={:.2e} iters={}",
        opt.solution.decision, opt.solution.probability, opt.solution.kkt.stationarity,
        opt.solution.kkt.complementarity, opt.solution.iterations
    );
    println!("elapsed {:?}", t0.elapsed());

    // water
    let ScenarioFile::Dynamic(d) = load("scenarios/water.json") else { panic!() };
    let scn = build_dynamic(&d).unwrap();
    let det = deterministic_bounds_dynamic(&scn).unwrap();
    println!("water det: {det:?}");
    let out = estimate_dynamic(&scn, &[Method::Kde, Method::Mc], 100_000, 7, None, None).unwrap();
    for e in &out.estimates {
        println!("water {:?} at det bounds: {:.4}", e.method, e.value);
    }
    println!("elapsed {:?}", t0.elapsed());
    let opt = optimize_dynamic(&scn, 0.75, 100_000, 7).unwrap();
    println!(
        "water optimum: {:?} (paper 5.936 6.560 2.576) P={:.4} stat={:.2e} iters={}",
        opt.solution.decision, opt.solution.probability, opt.solution.kkt.stationarity, opt.solution.iterations
    );
    println!("elapsed {:?}", t0.elapsed());

    // example 3
    let ScenarioFile::Dynamic(d) = load("scenarios/example3.json") else { panic!() };
    let scn = build_dynamic(&d).unwrap();
    for seed in [7u64, 8, 9] {
        let out = estimate_dynamic(&scn, &[Method::Kde, Method::Mc], 100_000, seed, None, None).unwrap();
        println!(
            "ex3 seed {seed}: kde={:.4} mc={:.4} gap={:.5}",
            out.estimates[0].value, out.estimates[1].value,
            (out.estimates[0].value - out.estimates[1].value).abs()
        );
    }
    println!("total {:?}", t0.elapsed());

    // example 2 SRD
    let ScenarioFile::Stationary(s) = load("scenarios/example2.json") else { panic!() };
    let scn = build_stationary(&s).unwrap();
    let out = estimate_stationary(&scn, &[Method::Srd], 10_000, 7, None).unwrap();
    println!("ex2 SRD: {:.5} (paper 0.7495)", out.estimates[0].value);
    println!("total {:?}", t0.elapsed());
}
