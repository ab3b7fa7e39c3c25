use approx::assert_relative_eq;
use parametrization::{
    depth_mup_preset, Group, GroupExponents, ParamError, Parametrization, RuleKind,
    WidthExponents,
};

fn custom(alpha: f64, gamma: f64, delta: f64, a: f64, eta: f64, base_depth: u32) -> Parametrization {
    Parametrization {
        alpha,
        gamma,
        delta,
        width: WidthExponents::mup(),
        a,
        eta,
        base_depth,
    }
}

#[test]
fn branch_multiplier_pinned_values() {
    // a = 2, alpha = 1/2, L0 = 8, L = 32: 2 * (32/8)^{-1/2} = 2/2 = 1.
    let p = custom(0.5, 0.5, 0.5, 2.0, 1e-3, 8);
    assert_relative_eq!(p.branch_multiplier(32).unwrap(), 1.0, max_relative = 1e-15);

    // Depth ratio 1 gives exactly a.
    let p = custom(0.7, 0.3, 0.7, 1.0, 1e-3, 8);
    assert_relative_eq!(p.branch_multiplier(8).unwrap(), 1.0, max_relative = 1e-15);

    // a = 1, alpha = 1, L0 = 1, L = 10: 10^{-1} = 0.1.
    let p = custom(1.0, 0.0, 1.0, 1.0, 1e-3, 1);
    assert_relative_eq!(p.branch_multiplier(10).unwrap(), 0.1, max_relative = 1e-15);

    assert_eq!(p.branch_multiplier(0), Err(ParamError::ZeroDepth));
}

#[test]
fn effective_update_scale_pinned_values() {
    // eta = 1e-3, hidden c = 1, gamma = 1/2, n = 256, L = L0: 1e-3/256.
    let p = custom(0.5, 0.5, 0.5, 1.0, 1e-3, 8);
    assert_relative_eq!(
        p.effective_update_scale(8, 256, Group::Hidden).unwrap(),
        3.90625e-6,
        max_relative = 1e-15
    );

    // Same but L = 4*L0: extra factor 4^{-1/2} = 1/2.
    assert_relative_eq!(
        p.effective_update_scale(32, 256, Group::Hidden).unwrap(),
        1.953125e-6,
        max_relative = 1e-15
    );

    // All exponents zero: the scale is exactly eta.
    let mut flat = custom(0.5, 0.0, 0.0, 1.0, 1.0, 8);
    flat.width.hidden = GroupExponents { c: 0.0, d: 0.0 };
    assert_relative_eq!(
        flat.effective_update_scale(8, 1234, Group::Hidden).unwrap(),
        1.0,
        max_relative = 1e-15
    );
}

#[test]
fn grad_prescale_pinned_values() {
    // hidden d = 1, delta = 1/2, n = 128, L = 4*L0: 128 * 2 = 256.
    let p = custom(0.5, 0.5, 0.5, 1.0, 1e-3, 8);
    assert_relative_eq!(
        p.grad_prescale(32, 128, Group::Hidden).unwrap(),
        256.0,
        max_relative = 1e-15
    );

    // d = 0 and delta = 0 leave gradients untouched.
    let mut flat = custom(0.5, 0.5, 0.0, 1.0, 1e-3, 8);
    flat.width.hidden = GroupExponents { c: 1.0, d: 0.0 };
    assert_relative_eq!(
        flat.grad_prescale(64, 999, Group::Hidden).unwrap(),
        1.0,
        max_relative = 1e-15
    );

    // Unit width and unit depth ratio: every power is 1.
    let p = custom(0.5, 0.5, 0.5, 1.0, 1e-3, 8);
    assert_relative_eq!(
        p.grad_prescale(8, 1, Group::Hidden).unwrap(),
        1.0,
        max_relative = 1e-15
    );
}

#[test]
fn raw_lr_depth_exponent_pinned_values() {
    let mup = depth_mup_preset(RuleKind::Sgd);
    assert_eq!(mup.raw_lr_depth_exponent(RuleKind::Sgd), 0.0);
    assert_eq!(mup.raw_lr_depth_exponent(RuleKind::Adam), -0.5);
    assert_eq!(mup.raw_lr_depth_exponent(RuleKind::SignSgd), -0.5);

    let ode = custom(1.0, 0.0, 1.0, 1.0, 1e-3, 8);
    assert_eq!(ode.raw_lr_depth_exponent(RuleKind::Sgd), 1.0);
}

#[test]
fn preset_shape() {
    for kind in [RuleKind::Sgd, RuleKind::SignSgd, RuleKind::Adam] {
        let p = depth_mup_preset(kind);
        assert_eq!((p.alpha, p.gamma, p.delta), (0.5, 0.5, 0.5));
        assert_eq!(p.width, WidthExponents::mup());
        assert_eq!((p.a, p.eta, p.base_depth), (1.0, 1e-3, 8));
        assert_eq!(p.classify().unwrap(), parametrization::RegionClass::DepthMuP);
        p.validate().unwrap();
    }
}

#[test]
fn mup_width_exponents_match_scaling_table() {
    let w = WidthExponents::mup();
    assert_eq!((w.input.c, w.hidden.c, w.output.c), (0.0, 1.0, 1.0));
    assert_eq!((w.input.d, w.hidden.d, w.output.d), (1.0, 1.0, 0.0));
}

#[test]
fn prescale_times_update_scale_cancels_for_preset_hidden() {
    // n^{d-c} (L/L0)^{delta-gamma} = 1 for hidden weights under the preset,
    // so the product is exactly eta.
    let p = depth_mup_preset(RuleKind::Sgd);
    for depth in [8, 16, 64, 512] {
        for width in [1, 16, 256, 8192] {
            let prod = p.grad_prescale(depth, width, Group::Hidden).unwrap()
                * p.effective_update_scale(depth, width, Group::Hidden).unwrap();
            assert_relative_eq!(prod, p.eta, max_relative = 1e-12);
        }
    }
}

#[test]
fn branch_multiplier_square_identity_at_half() {
    // For alpha = 1/2: multiplier^2 * (L/L0) = a^2 exactly.
    let p = custom(0.5, 0.5, 0.5, 1.7, 1e-3, 8);
    for depth in [1, 2, 8, 31, 64, 1000] {
        let m = p.branch_multiplier(depth).unwrap();
        let ratio = f64::from(depth) / 8.0;
        assert_relative_eq!(m * m * ratio, 1.7 * 1.7, max_relative = 1e-12);
    }
}
