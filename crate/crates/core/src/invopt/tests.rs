use super::*;
use crate::assets::{Backend, Background, Lighting, Mesh, RenderConfig, Scene};
use crate::brdf::BrdfParams;
use crate::diffgrad::ParamSet;
use crate::error::Error;
use crate::mathkit::{Direction, Rgb, RngStream, Vec3};
use crate::raster::Camera;
use crate::sgalg::{SgEnvLight, SgLobe};
use crate::shade::subsample_pixels;

pub(crate) fn studio_light() -> SgEnvLight {
    let lobe = |x, y, z, s, a: Rgb| SgLobe::new(Direction::from_xyz(x, y, z), s, a);
    SgEnvLight::new(vec![
        lobe(0.5, 0.6, 0.6, 40.0, Rgb::new(6.0, 5.0, 4.0)),
        lobe(-0.7, 0.3, -0.4, 4.0, Rgb::new(0.5, 0.7, 1.0)),
        lobe(0.0, 1.0, 0.0, 2.0, Rgb::new(0.6, 0.7, 0.9)),
        lobe(0.0, -1.0, 0.1, 3.0, Rgb::new(0.3, 0.25, 0.2)),
    ])
}

pub(crate) fn sphere(roughness: f64, specular: f64, size: usize) -> Scene {
    Scene {
        mesh: Mesh::icosphere(3, 1.0, Vec3::ZERO),
        camera: Camera::orbit(Vec3::ZERO, 3.0, 0.0, 20.0, 40.0, size),
        brdf: BrdfParams::uniform(Rgb::new(0.6, 0.45, 0.3), specular, roughness, 0.0),
        lighting: Lighting::Sg(studio_light()),
        background: Background::Color(Rgb::gray(0.05)),
        render: RenderConfig { backend: Backend::Sg, ..RenderConfig::default() },
    }
}

fn views(truth: &Scene, n: usize, size: usize, backend: Backend) -> Vec<TargetView> {
    (0..n)
        .map(|i| {
            let cam = Camera::orbit(Vec3::ZERO, 3.0, 360.0 * i as f64 / n as f64, 20.0, 40.0, size);
            TargetView::render_from(truth, cam, backend).unwrap()
        })
        .collect()
}

fn task(targets: Vec<TargetView>, free: &[&str], steps: usize) -> OptimizeTask {
    OptimizeTask {
        targets,
        free: free.iter().map(|s| s.to_string()).collect(),
        backend: Backend::Sg,
        config: OptimizerConfig { steps, ..OptimizerConfig::default() },
    }
}

#[test]
fn subsampled_l1_is_the_mean_over_that_set() {
    let truth = sphere(0.1, 0.5, 24);
    let t = views(&truth, 1, 24, Backend::Sg).remove(0);
    let other = crate::shade::render(&sphere(0.4, 0.2, 24), Backend::Sg).unwrap();
    let set = subsample_pixels(&t.mask, 0.2, RngStream::new(4, 1));
    assert!(set.len() > 5);
    let mut sum = 0.0;
    for &i in &set {
        for c in 0..3 {
            sum += (other.image.data[i].channel(c) - t.image.data[i].channel(c)).abs();
        }
    }
    let want = sum / (3 * set.len()) as f64;
    let got = loss_image_l1(&other.image, &t.image, Some(&set)).unwrap();
    assert!((got - want).abs() <= 1e-15 * want.max(1.0), "{got} vs {want}");
}

#[test]
fn total_loss_gradient_matches_fd_on_lobe_amplitude() {
    let truth = sphere(0.1, 0.5, 20);
    let targets = views(&truth, 2, 20, Backend::Sg);
    let scene = sphere(0.3, 0.3, 20);
    let params = ParamSet::from_scene(&scene);
    let opts = LossOptions::new(Backend::Sg);
    let eval = total_loss(&scene, &params, &targets, &scene.mesh, &opts).unwrap();
    assert!(eval.terms.total > 0.0);
    for name in ["lobe.0.mu.r", "lobe.2.mu.b", "roughness"] {
        let i = params.layout.select(name).unwrap()[0];
        let f = |d: f64| {
            let mut p = params.clone();
            p.values[i] += d;
            let mut s = scene.clone();
            p.apply_changes(&params, &mut s).unwrap();
            total_loss(&s, &p, &targets, &scene.mesh, &opts).unwrap().terms.total
        };
        let h = 1e-6;
        let fd = (f(h) - f(-h)) / (2.0 * h);
        let a = eval.grad.values[i];
        let rel = crate::diffgrad::relative_error(a, fd);
        assert!(rel < 1e-4, "{name}: analytic {a} numeric {fd}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let truth = sphere(0.1, 0.5, 16);
    let scene = sphere(0.4, 0.2, 16);
    let mut t = task(views(&truth, 2, 16, Backend::Sg), &["all"], 3);
    t.config.set_lr(0.0);
    let r = optimize(&t, &scene, None).unwrap();
    let before = ParamSet::from_scene(&scene);
    assert_eq!(r.params.values, before.values);
    assert_eq!(r.scene.brdf, scene.brdf);
    assert_eq!(r.scene.lighting, scene.lighting);
    assert_eq!(r.trace.len(), 4);
    assert!(r.trace.windows(2).all(|w| w[0].terms == w[1].terms));
}

#[test]
fn empty_free_set_is_rejected() {
    let truth = sphere(0.1, 0.5, 8);
    let t = task(views(&truth, 1, 8, Backend::Sg), &[], 3);
    assert!(matches!(optimize(&t, &truth, None), Err(Error::Validation(_))));
    let none = task(Vec::new(), &["all"], 3);
    assert!(matches!(none.validate(), Err(Error::Validation(_))));
    let unknown = task(views(&truth, 1, 8, Backend::Sg), &["gloss"], 3);
    assert!(matches!(optimize(&unknown, &truth, None), Err(Error::SelectorNotFound(_))));
}

struct Broken;

impl PerceptualLoss for Broken {
    fn loss(&self, image: &crate::assets::Image, _: &crate::assets::Image) -> (f64, crate::assets::Image) {
        (f64::NAN, image.clone())
    }
}

struct SquaredError;

impl PerceptualLoss for SquaredError {
    fn loss(&self, image: &crate::assets::Image, target: &crate::assets::Image) -> (f64, crate::assets::Image) {
        let mut l = 0.0;
        let g = crate::assets::Image::from_vec(
            image.width,
            image.height,
            image
                .data
                .iter()
                .zip(&target.data)
                .map(|(a, b)| {
                    let d = *a - *b;
                    l += d.dot(d);
                    d * 2.0
                })
                .collect(),
        )
        .unwrap();
        (l, g)
    }
}

#[test]
fn non_finite_loss_names_the_step() {
    let truth = sphere(0.1, 0.5, 8);
    let t = task(views(&truth, 1, 8, Backend::Sg), &["roughness"], 3);
    match optimize(&t, &sphere(0.3, 0.5, 8), Some(&Broken)) {
        Err(Error::NonFinite { step: 0 }) => {}
        other => panic!("{other:?}"),
    }
    let mut off = t.clone();
    off.config.weights.perceptual = 0.0;
    assert!(optimize(&off, &sphere(0.3, 0.5, 8), Some(&Broken)).is_ok());
}

#[test]
fn perceptual_plugin_contributes_its_weighted_gradient() {
    let truth = sphere(0.1, 0.5, 12);
    let targets = views(&truth, 1, 12, Backend::Sg);
    let scene = sphere(0.3, 0.3, 12);
    let params = ParamSet::from_scene(&scene);
    let mut opts = LossOptions::new(Backend::Sg);
    let plain = total_loss(&scene, &params, &targets, &scene.mesh, &opts).unwrap();
    assert_eq!(plain.terms.perceptual, 0.0);
    opts.perceptual = Some(&SquaredError);
    let with = total_loss(&scene, &params, &targets, &scene.mesh, &opts).unwrap();
    assert!(with.terms.perceptual > 0.0);
    assert!((with.terms.total - plain.terms.total - 0.5 * with.terms.perceptual).abs() < 1e-12);
    let i = params.layout.roughness();
    assert_ne!(with.grad.values[i], plain.grad.values[i]);
}

#[test]
fn material_fit_reduces_the_loss() {
    let truth = sphere(0.1, 0.5, 24);
    let mut t = task(views(&truth, 2, 24, Backend::Sg), &["roughness", "specular"], 60);
    t.config.lr_material = 0.05;
    let r = optimize(&t, &sphere(0.4, 0.2, 24), None).unwrap();
    let first = r.trace[0].terms.total;
    assert!(r.best().terms.total <= first);
    assert!(r.trace.last().unwrap().terms.total < 0.5 * first);
    assert!(r.scene.brdf.roughness < 0.4);
    assert_eq!(r.before.len(), 2);
    assert_eq!(r.after[1].width, 24);
    let csv = r.trace_csv();
    assert!(csv.starts_with("step,loss,l_im,l_msk,l_lap\n0,"));
    assert_eq!(csv.lines().count(), 62);
}

#[test]
fn free_vertices_see_silhouette_and_smoothness_terms() {
    let truth = sphere(0.3, 0.5, 16);
    let mut big = truth.clone();
    for v in &mut big.mesh.vertices {
        *v = *v * 1.1;
    }
    let t = task(views(&truth, 2, 16, Backend::Sg), &["shape"], 15);
    let r = optimize(&t, &big, None).unwrap();
    assert!(r.trace[0].terms.mask > 0.0);
    assert!(r.trace.last().unwrap().terms.total < r.trace[0].terms.total);
    assert!(r.trace.iter().skip(1).any(|e| e.terms.laplacian > 0.0));
}

#[test]
fn lit_region_covers_reflected_texels_only() {
    let env = crate::assets::EquirectImage::filled(16, 8, Rgb::gray(1.0));
    let mut s = sphere(0.05, 0.5, 16);
    s.lighting = Lighting::Env(env);
    s.brdf.metalness = 1.0;
    s.render.samples = 4;
    let cams = [s.camera];
    let m = lit_region(&s, &cams, Backend::Mc, 0.01).unwrap();
    let lit = m.data.iter().filter(|&&v| v > 0.0).count();
    assert!(lit > 10 && lit < m.len(), "{lit}");
    assert!(lit_region(&sphere(0.2, 0.5, 8), &cams, Backend::Sg, 0.01).is_err());
}
