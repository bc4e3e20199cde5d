use std::time::Instant;

use parttex::fixtures;
use parttex::metrics::psnr;
use parttex::raster::{render_colors, uniform_labels, WHITE};
use parttex::sds::{optimize, TexturingProblem};
use parttex::{DeltaScore, FieldConfig, Image, NoiseSchedule, OrthoFrame, PartLabel, SdsConfig, Vec3};

#[test]
fn sds_pulls_sphere_toward_delta_target() {
    let start = Instant::now();
    let sphere = fixtures::icosphere(3);
    let mesh = sphere.clone().with_labels(uniform_labels(&sphere, PartLabel::Others)).unwrap();
    let frame = OrthoFrame::fit(&mesh);
    let problem = TexturingProblem::new(&mesh, frame, 64).unwrap();
    let field = problem.init_field(FieldConfig::default(), 0).unwrap();
    let red = Image::filled(64, 64, [1.0, 0.0, 0.0]);
    let mut score = DeltaScore::new(red, NoiseSchedule::default());
    let config = SdsConfig { steps: 300, recon_weight: 0.0, seed: 1, ..SdsConfig::default() };
    let result = optimize(&problem, field, &mut score, &config, &mut |_| {}).unwrap();
    let (img, buffers) = problem.render_field(&result.field, problem.front_view()).unwrap();
    let fg: Vec<usize> = buffers.foreground().collect();
    let err = fg
        .iter()
        .map(|&p| (Vec3::from(img.pixel(p)) - Vec3::new(1.0, 0.0, 0.0)).norm())
        .sum::<f64>()
        / fg.len() as f64;
    eprintln!("mean front error {err:.4} in {:.1?}", start.elapsed());
    assert!(err < 0.05, "mean front error {err}");
}

#[test]
fn recon_only_reproduces_vertex_colored_target() {
    let start = Instant::now();
    let sphere = fixtures::icosphere(4);
    let colors: Vec<Vec3> = sphere
        .vertices()
        .iter()
        .map(|v| Vec3::new(0.5 + 0.4 * v.x, 0.5 + 0.4 * (2.0 * v.y).sin(), 0.5 + 0.4 * v.z * v.x))
        .collect();
    let mesh = sphere.with_labels(uniform_labels(&fixtures::icosphere(4), PartLabel::UpperClothes)).unwrap();
    let frame = OrthoFrame::fit(&mesh);
    let res = 128;
    let problem = TexturingProblem::new(&mesh, frame, res).unwrap();
    let (target, _) = render_colors(&mesh, &colors, problem.front_view(), WHITE).unwrap();
    let problem = problem.with_front_image(target.clone(), None).unwrap();
    let field = problem.init_field(FieldConfig::default(), 0).unwrap();
    let mut score = DeltaScore::new(target.clone(), NoiseSchedule::default());
    let config = SdsConfig { steps: 500, batch: 1, sds_weight: 0.0, ..SdsConfig::default() };
    let result = optimize(&problem, field, &mut score, &config, &mut |_| {}).unwrap();
    let (img, _) = problem.render_field(&result.field, problem.front_view()).unwrap();
    let db = psnr(&img, &target, 1.0).unwrap();
    eprintln!("recon psnr {db:.2} dB in {:.1?}", start.elapsed());
    assert!(db > 35.0, "psnr {db}");
}
