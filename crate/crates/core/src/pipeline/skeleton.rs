//! Adaptor chains and the fixed-sequence skeleton variants.

use thiserror::Error;

use super::grammar::manager_admits_manager;
use super::{PipelineForest, PipelineNode};
use crate::registry::{PassLevel, PassRegistry, RegistryError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SkeletonError {
    #[error("skeleton variant must be 1..=5, got {0}")]
    UnknownVariant(u8),
    #[error("pass `{pass}` is a {actual} pass, expected {expected}")]
    LevelMismatch {
        pass: String,
        expected: PassLevel,
        actual: PassLevel,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Wraps `children` (elements of a `target` manager) into the shortest
/// manager chain that may sit directly inside a `parent` manager.
///
/// `target` must be strictly deeper than `parent`, or equal to it (in which
/// case a same-level manager is produced).
pub fn nest_under(parent: PassLevel, target: PassLevel, children: Vec<PipelineNode>) -> PipelineNode {
    assert!(target >= parent, "cannot nest {target} under {parent}");
    let mut node = PipelineNode::manager(target, children);
    let mut level = target;
    while !manager_admits_manager(parent, level) {
        // Only loop managers need an adaptor (function) above them.
        debug_assert_eq!(level, PassLevel::Loop);
        level = PassLevel::Function;
        node = PipelineNode::manager(level, vec![node]);
    }
    node
}

/// Forced adaptor chain for a single pass: `module(p)`, `module(cgscc(p))`,
/// `module(function(p))` or `module(function(loop(p)))`.
pub fn minimal_wrap(pass: &str, level: PassLevel) -> PipelineNode {
    wrap_block(level, vec![PipelineNode::leaf(pass, level)])
}

/// Like [`minimal_wrap`] for a run of same-level elements.
pub fn wrap_block(level: PassLevel, elements: Vec<PipelineNode>) -> PipelineNode {
    match level {
        PassLevel::Module => PipelineNode::manager(PassLevel::Module, elements),
        deeper => PipelineNode::manager(
            PassLevel::Module,
            vec![nest_under(PassLevel::Module, deeper, elements)],
        ),
    }
}

fn expect_level(registry: &PassRegistry, pass: &str, expected: PassLevel) -> Result<(), SkeletonError> {
    let actual = registry.level_of(pass)?;
    if actual != expected {
        return Err(SkeletonError::LevelMismatch {
            pass: pass.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// The five nesting skeletons for a fixed `M, C, F, L` pass order:
///
/// 1. fully sequential
/// 2. F+L combined
/// 3. M+C and F+L combined
/// 4. C+F+L combined
/// 5. fully nested
pub fn build_skeleton_variant(
    variant: u8,
    m: &str,
    c: &str,
    f: &str,
    l: &str,
    registry: &PassRegistry,
) -> Result<PipelineForest, SkeletonError> {
    use PassLevel::*;
    if !(1..=5).contains(&variant) {
        return Err(SkeletonError::UnknownVariant(variant));
    }
    expect_level(registry, m, Module)?;
    expect_level(registry, c, Cgscc)?;
    expect_level(registry, f, Function)?;
    expect_level(registry, l, Loop)?;

    let leaf = PipelineNode::leaf;
    let mgr = PipelineNode::manager;
    let loop_l = || mgr(Loop, vec![leaf(l, Loop)]);
    let fn_fl = || mgr(Function, vec![leaf(f, Function), loop_l()]);

    let trees = match variant {
        1 => vec![
            minimal_wrap(m, Module),
            minimal_wrap(c, Cgscc),
            minimal_wrap(f, Function),
            minimal_wrap(l, Loop),
        ],
        2 => vec![
            minimal_wrap(m, Module),
            minimal_wrap(c, Cgscc),
            mgr(Module, vec![fn_fl()]),
        ],
        3 => vec![
            mgr(Module, vec![leaf(m, Module), mgr(Cgscc, vec![leaf(c, Cgscc)])]),
            mgr(Module, vec![fn_fl()]),
        ],
        4 => vec![
            minimal_wrap(m, Module),
            mgr(Module, vec![mgr(Cgscc, vec![leaf(c, Cgscc), fn_fl()])]),
        ],
        _ => vec![mgr(
            Module,
            vec![leaf(m, Module), mgr(Cgscc, vec![leaf(c, Cgscc), fn_fl()])],
        )],
    };
    Ok(PipelineForest::new(trees))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::validate;

    const PASSES: (&str, &str, &str, &str) = ("globalopt", "inline", "gvn", "loop-deletion");

    fn variant(v: u8) -> PipelineForest {
        let (m, c, f, l) = PASSES;
        build_skeleton_variant(v, m, c, f, l, &PassRegistry::builtin()).unwrap()
    }

    #[test]
    fn variant_strings() {
        let expected = [
            "module(globalopt),module(cgscc(inline)),module(function(gvn)),module(function(loop(loop-deletion)))",
            "module(globalopt),module(cgscc(inline)),module(function(gvn,loop(loop-deletion)))",
            "module(globalopt,cgscc(inline)),module(function(gvn,loop(loop-deletion)))",
            "module(globalopt),module(cgscc(inline,function(gvn,loop(loop-deletion))))",
            "module(globalopt,cgscc(inline,function(gvn,loop(loop-deletion))))",
        ];
        for (i, want) in expected.iter().enumerate() {
            let f = variant(i as u8 + 1);
            assert_eq!(&f.to_pipeline_string(), want);
            assert!(validate(&f, &PassRegistry::builtin()).is_valid());
        }
    }

    #[test]
    fn variants_preserve_pass_order() {
        let first = variant(1).leaf_sequence();
        for v in 2..=5 {
            assert_eq!(variant(v).leaf_sequence(), first);
        }
    }

    #[test]
    fn wrong_levels_rejected() {
        let reg = PassRegistry::builtin();
        let err = build_skeleton_variant(1, "gvn", "inline", "gvn", "licm", &reg).unwrap_err();
        assert!(matches!(err, SkeletonError::LevelMismatch { .. }));
        assert!(matches!(
            build_skeleton_variant(6, "globalopt", "inline", "gvn", "licm", &reg),
            Err(SkeletonError::UnknownVariant(6))
        ));
        assert!(matches!(
            build_skeleton_variant(1, "nope", "inline", "gvn", "licm", &reg),
            Err(SkeletonError::Registry(_))
        ));
    }

    #[test]
    fn minimal_wraps() {
        assert_eq!(minimal_wrap("gvn", PassLevel::Function).to_string(), "module(function(gvn))");
        assert_eq!(
            minimal_wrap("loop-deletion", PassLevel::Loop).to_string(),
            "module(function(loop(loop-deletion)))"
        );
        assert_eq!(minimal_wrap("globalopt", PassLevel::Module).to_string(), "module(globalopt)");
        assert_eq!(minimal_wrap("inline", PassLevel::Cgscc).to_string(), "module(cgscc(inline))");
    }

    #[test]
    fn nesting_chains() {
        use PassLevel::*;
        let l = || vec![PipelineNode::leaf("licm", Loop)];
        assert_eq!(nest_under(Cgscc, Loop, l()).to_string(), "function(loop(licm))");
        assert_eq!(nest_under(Function, Loop, l()).to_string(), "loop(licm)");
        assert_eq!(nest_under(Loop, Loop, l()).to_string(), "loop(licm)");
    }
}
