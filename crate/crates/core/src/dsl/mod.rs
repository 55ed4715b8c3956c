//! Site kinds, built-in operators and the operator-expression language.

mod expr;
mod local;
mod parser;
mod site;

pub use expr::{ExprKind, OpExpr, OpName};
pub use local::{fermion_parity, local_matrix, local_matrix_capped, Parity, DEFAULT_MAX_DIM};
pub use parser::{parse, parse_scalar, Definition, ParseContext};
pub use site::{builtin_operators, LocalState, OperatorDef, Registry, SiteKind};
