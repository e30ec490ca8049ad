//! Production rules, the recursive-descent parser, and the validator.
//!
//! ```text
//! R1  Pipeline        -> ModuleManager | ModuleManager "," Pipeline
//! R2  ModuleManager   -> "module(" (ModuleElement ",")* ModuleElement ")"
//! R3  ModuleElement   -> ModulePass | ModuleManager | CGSCCManager | FunctionManager
//! R4  CGSCCManager    -> "cgscc(" (CGSCCElement ",")* CGSCCElement ")"
//! R5  CGSCCElement    -> CGSCCPass | CGSCCManager | FunctionManager
//! R6  FunctionManager -> "function(" (FunctionElement ",")* FunctionElement ")"
//! R7  FunctionElement -> FunctionPass | FunctionManager | LoopManager
//! R8  LoopManager     -> "loop(" (LoopElement ",")* LoopElement ")"
//! R9  LoopElement     -> LoopPass | LoopManager
//! ```

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::{NodePath, PipelineForest, PipelineNode};
use crate::registry::{LevelSpec, PassLevel, PassRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
}

impl Rule {
    /// Rule listing what may appear inside a manager of `level`.
    pub fn element_rule(level: PassLevel) -> Rule {
        match level {
            PassLevel::Module => Rule::R3,
            PassLevel::Cgscc => Rule::R5,
            PassLevel::Function => Rule::R7,
            PassLevel::Loop => Rule::R9,
        }
    }

    /// Rule defining the manager production for `level` (requires ≥ 1 element).
    pub fn manager_rule(level: PassLevel) -> Rule {
        match level {
            PassLevel::Module => Rule::R2,
            PassLevel::Cgscc => Rule::R4,
            PassLevel::Function => Rule::R6,
            PassLevel::Loop => Rule::R8,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Whether a manager of level `child` may sit directly inside a manager of
/// level `parent`.
pub fn manager_admits_manager(parent: PassLevel, child: PassLevel) -> bool {
    use PassLevel::*;
    matches!(
        (parent, child),
        (Module, Module | Cgscc | Function) | (Cgscc, Cgscc | Function) | (Function, Function | Loop) | (Loop, Loop)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("R1 violated at byte {offset}: top-level element `{found}` is not a module manager")]
    TopLevelNotModule { offset: usize, found: String },
    #[error("{rule} violated at byte {offset}: {element} cannot appear inside a {parent} manager")]
    LevelMismatch {
        offset: usize,
        rule: Rule,
        parent: PassLevel,
        element: String,
    },
    #[error("unknown pass `{name}` at byte {offset}")]
    UnknownPass { offset: usize, name: String },
    #[error("{rule} violated at byte {offset}: empty {level} manager")]
    EmptyManager {
        offset: usize,
        rule: Rule,
        level: PassLevel,
    },
}

impl ParseError {
    pub fn rule(&self) -> Option<Rule> {
        match self {
            ParseError::TopLevelNotModule { .. } => Some(Rule::R1),
            ParseError::LevelMismatch { rule, .. } | ParseError::EmptyManager { rule, .. } => Some(*rule),
            ParseError::Syntax { .. } | ParseError::UnknownPass { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Ident(&'a str),
    Open,
    Close,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Returns the next token and its starting byte offset without consuming it.
    fn peek(&mut self) -> (Token<'a>, usize) {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let tok = match rest.chars().next() {
            None => Token::End,
            Some('(') => Token::Open,
            Some(')') => Token::Close,
            Some(',') => Token::Comma,
            Some(_) => {
                let len = rest
                    .find(|c: char| c == '(' || c == ')' || c == ',' || c.is_whitespace())
                    .unwrap_or(rest.len());
                Token::Ident(&rest[..len])
            }
        };
        (tok, start)
    }

    fn bump(&mut self, tok: &Token<'a>) {
        self.pos += match tok {
            Token::Ident(s) => s.len(),
            Token::End => 0,
            _ => 1,
        };
    }

    fn next(&mut self) -> (Token<'a>, usize) {
        let (tok, at) = self.peek();
        self.bump(&tok);
        (tok, at)
    }
}

fn describe(tok: &Token<'_>) -> String {
    match tok {
        Token::Ident(s) => format!("`{s}`"),
        Token::Open => "`(`".into(),
        Token::Close => "`)`".into(),
        Token::Comma => "`,`".into(),
        Token::End => "end of input".into(),
    }
}

struct Parser<'a, 'r> {
    lex: Lexer<'a>,
    registry: &'r PassRegistry,
}

impl<'a, 'r> Parser<'a, 'r> {
    fn expect(&mut self, want: Token<'static>) -> Result<(), ParseError> {
        let (tok, offset) = self.lex.next();
        if tok == want {
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset,
                message: format!("expected {}, found {}", describe(&want), describe(&tok)),
            })
        }
    }

    /// Reads an identifier and reports whether it opens a manager.
    fn element_head(&mut self) -> Result<(&'a str, usize, Option<PassLevel>), ParseError> {
        let (tok, offset) = self.lex.next();
        let name = match tok {
            Token::Ident(s) => s,
            other => {
                return Err(ParseError::Syntax {
                    offset,
                    message: format!("expected a pass or manager, found {}", describe(&other)),
                })
            }
        };
        let (after, _) = self.lex.peek();
        if after == Token::Open {
            match PassLevel::from_keyword(name) {
                Some(level) => Ok((name, offset, Some(level))),
                None => Err(ParseError::Syntax {
                    offset,
                    message: format!("`{name}(` is not a pass manager"),
                }),
            }
        } else {
            Ok((name, offset, None))
        }
    }

    fn pipeline(&mut self) -> Result<PipelineForest, ParseError> {
        let mut trees = Vec::new();
        loop {
            let (name, offset, manager) = self.element_head()?;
            match manager {
                Some(PassLevel::Module) => trees.push(self.manager_body(PassLevel::Module, offset)?),
                _ => {
                    return Err(ParseError::TopLevelNotModule {
                        offset,
                        found: name.to_string(),
                    })
                }
            }
            let (tok, offset) = self.lex.next();
            match tok {
                Token::Comma => continue,
                Token::End => break,
                other => {
                    return Err(ParseError::Syntax {
                        offset,
                        message: format!("expected `,` or end of input, found {}", describe(&other)),
                    })
                }
            }
        }
        Ok(PipelineForest::new(trees))
    }

    /// Parses `( elements )` after a manager keyword.
    fn manager_body(&mut self, level: PassLevel, offset: usize) -> Result<PipelineNode, ParseError> {
        self.expect(Token::Open)?;
        if self.lex.peek().0 == Token::Close {
            return Err(ParseError::EmptyManager {
                offset,
                rule: Rule::manager_rule(level),
                level,
            });
        }
        let mut children = Vec::new();
        loop {
            children.push(self.element(level)?);
            let (tok, at) = self.lex.next();
            match tok {
                Token::Comma => continue,
                Token::Close => break,
                other => {
                    return Err(ParseError::Syntax {
                        offset: at,
                        message: format!("expected `,` or `)`, found {}", describe(&other)),
                    })
                }
            }
        }
        Ok(PipelineNode::Manager { level, children })
    }

    fn element(&mut self, parent: PassLevel) -> Result<PipelineNode, ParseError> {
        let (name, offset, manager) = self.element_head()?;
        let rule = Rule::element_rule(parent);
        match manager {
            Some(level) => {
                if !manager_admits_manager(parent, level) {
                    return Err(ParseError::LevelMismatch {
                        offset,
                        rule,
                        parent,
                        element: format!("a {level} manager"),
                    });
                }
                self.manager_body(level, offset)
            }
            None => {
                let info = self.registry.get(name).map_err(|_| ParseError::UnknownPass {
                    offset,
                    name: name.to_string(),
                })?;
                if !info.level.admits(parent) {
                    return Err(ParseError::LevelMismatch {
                        offset,
                        rule,
                        parent,
                        element: format!("{} pass `{name}`", info.level),
                    });
                }
                Ok(PipelineNode::leaf(name, parent))
            }
        }
    }
}

/// Parses a pipeline string. Whitespace between tokens is ignored.
pub fn parse_pipeline(text: &str, registry: &PassRegistry) -> Result<PipelineForest, ParseError> {
    let mut parser = Parser {
        lex: Lexer { src: text, pos: 0 },
        registry,
    };
    parser.pipeline()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    EmptyForest,
    TopLevelNotModule,
    EmptyManager,
    LevelMismatch,
    UnknownPass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: NodePath,
    pub kind: ViolationKind,
    pub rule: Option<Rule>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            Some(rule) => write!(f, "{rule} at {:?}: {}", self.path, self.message),
            None => write!(f, "at {:?}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn cites(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == Some(rule))
    }
}

/// Checks a forest against R1–R9 and the registry. Violations are data.
pub fn validate(forest: &PipelineForest, registry: &PassRegistry) -> ValidationReport {
    let mut report = ValidationReport::default();
    if forest.trees.is_empty() {
        report.violations.push(Violation {
            path: vec![],
            kind: ViolationKind::EmptyForest,
            rule: Some(Rule::R1),
            message: "a pipeline needs at least one module manager".into(),
        });
    }
    let mut path = Vec::new();
    for (i, tree) in forest.trees.iter().enumerate() {
        path.push(i);
        if !matches!(tree, PipelineNode::Manager { level: PassLevel::Module, .. }) {
            let what = match tree {
                PipelineNode::Manager { level, .. } => format!("a {level} manager"),
                PipelineNode::Leaf { pass, .. } => format!("pass `{pass}`"),
            };
            report.violations.push(Violation {
                path: path.clone(),
                kind: ViolationKind::TopLevelNotModule,
                rule: Some(Rule::R1),
                message: format!("top-level element is {what}, not a module manager"),
            });
        }
        check_node(tree, &mut path, registry, &mut report);
        path.pop();
    }
    report
}

fn check_node(
    node: &PipelineNode,
    path: &mut Vec<usize>,
    registry: &PassRegistry,
    report: &mut ValidationReport,
) {
    match node {
        PipelineNode::Leaf { pass, .. } => {
            if !registry.contains(pass) {
                report.violations.push(Violation {
                    path: path.clone(),
                    kind: ViolationKind::UnknownPass,
                    rule: None,
                    message: format!("unknown pass `{pass}`"),
                });
            }
        }
        PipelineNode::Manager { level, children } => {
            if children.is_empty() {
                report.violations.push(Violation {
                    path: path.clone(),
                    kind: ViolationKind::EmptyManager,
                    rule: Some(Rule::manager_rule(*level)),
                    message: format!("empty {level} manager"),
                });
            }
            let rule = Rule::element_rule(*level);
            for (i, child) in children.iter().enumerate() {
                path.push(i);
                let mismatch = match child {
                    PipelineNode::Manager { level: cl, .. } => {
                        (!manager_admits_manager(*level, *cl)).then(|| format!("a {cl} manager"))
                    }
                    PipelineNode::Leaf { pass, level: leaf_level } => {
                        let spec = registry.get(pass).map(|p| p.level).ok();
                        let registry_ok = spec.is_none_or(|s| s.admits(*level));
                        if *leaf_level != *level || !registry_ok {
                            let shown = match spec {
                                Some(LevelSpec::Fixed(l)) => l,
                                _ => *leaf_level,
                            };
                            Some(format!("{shown} pass `{pass}`"))
                        } else {
                            None
                        }
                    }
                };
                if let Some(what) = mismatch {
                    report.violations.push(Violation {
                        path: path.clone(),
                        kind: ViolationKind::LevelMismatch,
                        rule: Some(rule),
                        message: format!("{what} cannot appear inside a {level} manager"),
                    });
                }
                check_node(child, path, registry, report);
                path.pop();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::PipelineNode as N;
    use PassLevel::*;

    fn reg() -> PassRegistry {
        PassRegistry::builtin()
    }

    const NESTED: &str = "module(globalopt,cgscc(inline,function(gvn,loop(loop-deletion))))";

    #[test]
    fn parses_fully_nested() {
        let f = parse_pipeline(NESTED, &reg()).unwrap();
        assert_eq!(f.trees.len(), 1);
        assert_eq!(f.structural_metrics().max_depth, 4);
        assert_eq!(f.to_pipeline_string(), NESTED);
        assert!(validate(&f, &reg()).is_valid());
    }

    #[test]
    fn minimal_derivation() {
        let f = parse_pipeline("module(globalopt)", &reg()).unwrap();
        assert_eq!(f.trees.len(), 1);
        assert_eq!(f.leaf_count(), 1);
    }

    #[test]
    fn whitespace_is_tolerated() {
        let f = parse_pipeline("  module( globalopt ,\n function( gvn , adce ) ) , module(strip) ", &reg())
            .unwrap();
        assert_eq!(f.to_pipeline_string(), "module(globalopt,function(gvn,adce)),module(strip)");
    }

    #[test]
    fn top_level_must_be_module() {
        let err = parse_pipeline("function(gvn)", &reg()).unwrap_err();
        assert!(matches!(err, ParseError::TopLevelNotModule { .. }));
        assert_eq!(err.rule(), Some(Rule::R1));
        assert!(matches!(
            parse_pipeline("loop(licm)", &reg()),
            Err(ParseError::TopLevelNotModule { .. })
        ));
        assert!(matches!(
            parse_pipeline("globalopt", &reg()),
            Err(ParseError::TopLevelNotModule { .. })
        ));
    }

    #[test]
    fn module_pass_under_function() {
        let err = parse_pipeline("module(function(globalopt))", &reg()).unwrap_err();
        assert!(matches!(err, ParseError::LevelMismatch { rule: Rule::R7, .. }), "{err}");
    }

    #[test]
    fn manager_mismatches() {
        let cases = [
            ("module(loop(licm))", Rule::R3),
            ("module(cgscc(loop(licm)))", Rule::R5),
            ("module(cgscc(module(strip)))", Rule::R5),
            ("module(function(cgscc(inline)))", Rule::R7),
            ("module(function(loop(function(gvn))))", Rule::R9),
            ("module(inline)", Rule::R3),
        ];
        for (text, rule) in cases {
            let err = parse_pipeline(text, &reg()).unwrap_err();
            assert_eq!(err.rule(), Some(rule), "{text}: {err}");
        }
    }

    #[test]
    fn empty_manager_and_syntax() {
        let err = parse_pipeline("module(function())", &reg()).unwrap_err();
        assert!(matches!(err, ParseError::EmptyManager { rule: Rule::R6, .. }));
        for bad in ["", "module(", "module(strip", "module(strip))", "module(strip,)", "module(strip) module(strip)", "modul(strip)", "module(licm<x>(y))"] {
            let err = parse_pipeline(bad, &reg()).unwrap_err();
            assert!(
                matches!(err, ParseError::Syntax { .. } | ParseError::TopLevelNotModule { .. }),
                "{bad:?}: {err:?}"
            );
        }
    }

    #[test]
    fn unknown_pass_rejected() {
        assert!(matches!(
            parse_pipeline("module(function(nope))", &reg()),
            Err(ParseError::UnknownPass { .. })
        ));
    }

    #[test]
    fn polymorphic_pass_takes_enclosing_level() {
        let f = parse_pipeline(
            "module(invalidate<all>,function(invalidate<all>,loop(invalidate<all>)))",
            &reg(),
        )
        .unwrap();
        let levels: Vec<_> = f.leaf_sequence().into_iter().map(|p| p.level).collect();
        assert_eq!(levels, vec![Module, Function, Loop]);
        assert!(validate(&f, &reg()).is_valid());
    }

    #[test]
    fn validator_cites_rules() {
        let r = reg();
        let loop_under_module = PipelineForest::new(vec![N::manager(
            Module,
            vec![N::manager(Loop, vec![N::leaf("licm", Loop)])],
        )]);
        let report = validate(&loop_under_module, &r);
        assert!(report.cites(Rule::R3));
        assert_eq!(report.violations.len(), 1);

        let empty = PipelineForest::new(vec![N::manager(Module, vec![N::manager(Function, vec![])])]);
        let report = validate(&empty, &r);
        assert_eq!(report.violations[0].kind, ViolationKind::EmptyManager);
        assert!(report.cites(Rule::R6));

        let wrong_leaf = PipelineForest::new(vec![N::manager(Module, vec![N::leaf("gvn", Module)])]);
        assert!(validate(&wrong_leaf, &r).cites(Rule::R3));

        let root_fn = PipelineForest::new(vec![N::manager(Function, vec![N::leaf("gvn", Function)])]);
        assert!(validate(&root_fn, &r).cites(Rule::R1));

        assert!(validate(&PipelineForest::new(vec![]), &r).cites(Rule::R1));

        let unknown = PipelineForest::new(vec![N::manager(Module, vec![N::leaf("zzz", Module)])]);
        assert_eq!(validate(&unknown, &r).violations[0].kind, ViolationKind::UnknownPass);
    }

    #[test]
    fn same_level_nesting_is_grammatical() {
        let r = reg();
        for text in [
            "module(module(strip))",
            "module(cgscc(cgscc(inline)))",
            "module(function(function(gvn)))",
            "module(function(loop(loop(licm))))",
        ] {
            let f = parse_pipeline(text, &r).unwrap();
            assert!(validate(&f, &r).is_valid(), "{text}");
            assert_eq!(f.to_pipeline_string(), text);
        }
    }
}
