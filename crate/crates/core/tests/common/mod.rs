#![allow(dead_code)]

use mpsim::dsl::{parse, OpExpr, ParseContext, Registry};
use mpsim::C64;
use ndarray::Array2;

pub fn reg() -> Registry {
    Registry::builtin()
}

pub fn ctx() -> ParseContext {
    ParseContext::new(reg())
}

pub fn expr(text: &str) -> OpExpr {
    parse(text, &ctx()).unwrap_or_else(|e| panic!("`{text}`: {e}"))
}

pub fn expr_with(text: &str, params: &[(&str, f64)]) -> OpExpr {
    let mut c = ctx();
    for (k, v) in params {
        c = c.with_param(k, *v);
    }
    parse(text, &c).unwrap_or_else(|e| panic!("`{text}`: {e}"))
}

pub fn max_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
