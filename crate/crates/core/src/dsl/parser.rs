use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::SyntaxError;

/// Parses command-language source into a [`Program`].
pub fn parse_program(source: &str) -> Result<Program, SyntaxError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser { tokens, at: 0 };
    let statements = parser.statements(true)?;
    Ok(Program {
        statements,
        source: source.to_string(),
    })
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.at + offset).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.at].pos
    }

    fn advance(&mut self) -> Token {
        let tok = self.tokens[self.at].clone();
        if self.at < self.tokens.len() - 1 {
            self.at += 1;
        }
        tok
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let token = &self.tokens[self.at];
        SyntaxError {
            line: token.pos.line,
            column: token.pos.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: token.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Token, SyntaxError> {
        if *self.peek() == tok {
            Ok(self.advance())
        } else {
            Err(self.error(&[&format!("`{}`", tok.symbol())]))
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Semi) {
            self.advance();
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.advance();
        }
    }

    /// Statement list up to `}` (block) or end of input (top level).
    fn statements(&mut self, top_level: bool) -> Result<Vec<Stmt>, SyntaxError> {
        let mut stmts = Vec::new();
        self.skip_separators();
        loop {
            match self.peek() {
                Tok::Eof if top_level => break,
                Tok::RBrace if !top_level => break,
                Tok::Eof => return Err(self.error(&["`}`", "statement"])),
                _ => {}
            }
            let stmt = self.statement()?;
            let compound = matches!(
                stmt.kind,
                StmtKind::If { .. } | StmtKind::While { .. } | StmtKind::ForRange { .. }
            );
            stmts.push(stmt);
            match self.peek() {
                Tok::Newline | Tok::Semi => self.skip_separators(),
                Tok::Eof if top_level => break,
                Tok::RBrace if !top_level => break,
                _ if compound => {}
                _ => {
                    let closing = if top_level { "end of input" } else { "`}`" };
                    return Err(self.error(&["newline", "`;`", closing]));
                }
            }
        }
        Ok(stmts)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        self.expect(Tok::LBrace)?;
        let body = self.statements(false)?;
        self.expect(Tok::RBrace)?;
        Ok(body)
    }

    fn statement(&mut self) -> Result<Stmt, SyntaxError> {
        let pos = self.pos();
        let kind = match self.peek().clone() {
            Tok::If => self.if_stmt()?,
            Tok::While => {
                self.advance();
                let cond = self.expr()?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::For => {
                self.advance();
                let var = match self.advance().tok {
                    Tok::Ident(name) => name,
                    _ => {
                        self.at -= 1;
                        return Err(self.error(&["loop variable"]));
                    }
                };
                self.expect(Tok::In)?;
                match self.peek() {
                    Tok::Ident(name) if name == "range" => {
                        self.advance();
                    }
                    _ => return Err(self.error(&["`range`"])),
                }
                self.expect(Tok::LParen)?;
                let start = self.expr()?;
                self.expect(Tok::Comma)?;
                let end = self.expr()?;
                self.expect(Tok::RParen)?;
                let body = self.block()?;
                StmtKind::ForRange {
                    var,
                    start,
                    end,
                    body,
                }
            }
            Tok::Return => {
                self.advance();
                if matches!(
                    self.peek(),
                    Tok::Newline | Tok::Semi | Tok::RBrace | Tok::Eof
                ) {
                    StmtKind::Return(None)
                } else {
                    StmtKind::Return(Some(self.expr()?))
                }
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::Assign => {
                self.advance();
                self.advance();
                let value = self.expr()?;
                StmtKind::Assign {
                    target: name,
                    value,
                }
            }
            _ => StmtKind::Expr(self.expr()?),
        };
        Ok(Stmt { kind, pos })
    }

    fn if_stmt(&mut self) -> Result<StmtKind, SyntaxError> {
        self.expect(Tok::If)?;
        let cond = self.expr()?;
        let then_block = self.block()?;
        // `else` may sit on the line after the closing brace.
        let mut look = 0;
        while *self.peek_at(look) == Tok::Newline {
            look += 1;
        }
        let else_block = if *self.peek_at(look) == Tok::Else {
            self.skip_newlines();
            self.advance();
            if *self.peek() == Tok::If {
                let pos = self.pos();
                let nested = self.if_stmt()?;
                Some(vec![Stmt { kind: nested, pos }])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(StmtKind::If {
            cond,
            then_block,
            else_block,
        })
    }

    pub fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            let pos = self.advance().pos;
            let rhs = self.and_expr()?;
            lhs = binary(BinaryOp::Or, lhs, rhs, pos);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.not_expr()?;
        while *self.peek() == Tok::And {
            let pos = self.advance().pos;
            let rhs = self.not_expr()?;
            lhs = binary(BinaryOp::And, lhs, rhs, pos);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, SyntaxError> {
        if *self.peek() == Tok::Not {
            let pos = self.advance().pos;
            let operand = self.not_expr()?;
            return Ok(Expr {
                kind: ExprKind::Unary {
                    op: UnaryOp::Not,
                    operand: Box::new(operand),
                },
                pos,
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Lt => BinaryOp::Lt,
            Tok::Le => BinaryOp::Le,
            Tok::Gt => BinaryOp::Gt,
            Tok::Ge => BinaryOp::Ge,
            Tok::EqEq => BinaryOp::Eq,
            Tok::NotEq => BinaryOp::Ne,
            _ => return Ok(lhs),
        };
        let pos = self.advance().pos;
        let rhs = self.additive()?;
        Ok(binary(op, lhs, rhs, pos))
    }

    fn additive(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.advance().pos;
            let rhs = self.multiplicative()?;
            lhs = binary(op, lhs, rhs, pos);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            let pos = self.advance().pos;
            let rhs = self.unary()?;
            lhs = binary(op, lhs, rhs, pos);
        }
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if *self.peek() == Tok::Minus {
            let pos = self.advance().pos;
            let operand = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Unary {
                    op: UnaryOp::Neg,
                    operand: Box::new(operand),
                },
                pos,
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, SyntaxError> {
        let mut expr = self.primary()?;
        loop {
            match self.peek() {
                Tok::LBracket => {
                    let pos = self.advance().pos;
                    let index = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    expr = Expr {
                        kind: ExprKind::Index {
                            target: Box::new(expr),
                            index: Box::new(index),
                        },
                        pos,
                    };
                }
                Tok::Dot => {
                    let pos = self.advance().pos;
                    let name = match self.peek().clone() {
                        Tok::Ident(name) => {
                            self.advance();
                            name
                        }
                        _ => return Err(self.error(&["field name"])),
                    };
                    expr = Expr {
                        kind: ExprKind::Field {
                            target: Box::new(expr),
                            name,
                        },
                        pos,
                    };
                }
                _ => return Ok(expr),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let pos = self.pos();
        let kind = match self.peek().clone() {
            Tok::Number(n) => {
                self.advance();
                ExprKind::Number(n)
            }
            Tok::Str(s) => {
                self.advance();
                ExprKind::Str(s)
            }
            Tok::True => {
                self.advance();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.advance();
                ExprKind::Bool(false)
            }
            Tok::Ident(name) => {
                self.advance();
                if *self.peek() == Tok::LParen {
                    self.advance();
                    let args = self.comma_list(Tok::RParen)?;
                    ExprKind::Call { name, args }
                } else {
                    ExprKind::Var(name)
                }
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                return Ok(inner);
            }
            Tok::LBracket => {
                self.advance();
                ExprKind::List(self.comma_list(Tok::RBracket)?)
            }
            Tok::LBrace => {
                self.advance();
                ExprKind::Record(self.record_fields()?)
            }
            _ => return Err(self.error(&["expression"])),
        };
        Ok(Expr { kind, pos })
    }

    fn comma_list(&mut self, close: Tok) -> Result<Vec<Expr>, SyntaxError> {
        let mut items = Vec::new();
        if *self.peek() == close {
            self.advance();
            return Ok(items);
        }
        loop {
            items.push(self.expr()?);
            match self.peek() {
                Tok::Comma => {
                    self.advance();
                    if *self.peek() == close {
                        self.advance();
                        return Ok(items);
                    }
                }
                t if *t == close => {
                    self.advance();
                    return Ok(items);
                }
                _ => return Err(self.error(&["`,`", &format!("`{}`", close.symbol())])),
            }
        }
    }

    fn record_fields(&mut self) -> Result<Vec<(String, Expr)>, SyntaxError> {
        let mut fields = Vec::new();
        loop {
            self.skip_newlines();
            let key = match self.peek().clone() {
                Tok::RBrace => {
                    self.advance();
                    return Ok(fields);
                }
                Tok::Ident(name) | Tok::Str(name) => {
                    self.advance();
                    name
                }
                _ => return Err(self.error(&["field name", "`}`"])),
            };
            self.expect(Tok::Colon)?;
            let value = self.expr()?;
            fields.push((key, value));
            self.skip_newlines();
            match self.peek() {
                Tok::Comma => {
                    self.advance();
                }
                Tok::RBrace => {
                    self.advance();
                    return Ok(fields);
                }
                _ => return Err(self.error(&["`,`", "`}`"])),
            }
        }
    }
}

fn binary(op: BinaryOp, lhs: Expr, rhs: Expr, pos: Pos) -> Expr {
    Expr {
        kind: ExprKind::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        },
        pos,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment() {
        let p = parse_program("x = 1 + 2").unwrap();
        assert_eq!(p.statements.len(), 1);
        match &p.statements[0].kind {
            StmtKind::Assign { target, value } => {
                assert_eq!(target, "x");
                assert!(matches!(
                    value.kind,
                    ExprKind::Binary {
                        op: BinaryOp::Add,
                        ..
                    }
                ));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conditional_with_calls() {
        let p = parse_program("if get_distance_reading() < 5 { turn(30) }").unwrap();
        let StmtKind::If {
            cond,
            then_block,
            else_block,
        } = &p.statements[0].kind
        else {
            panic!("expected if");
        };
        assert!(else_block.is_none());
        let ExprKind::Binary { lhs, .. } = &cond.kind else {
            panic!()
        };
        assert!(matches!(&lhs.kind, ExprKind::Call { name, args } if name == "get_distance_reading" && args.is_empty()));
        assert!(matches!(&then_block[0].kind, StmtKind::Expr(Expr { kind: ExprKind::Call { name, .. }, .. }) if name == "turn"));
    }

    #[test]
    fn unterminated_expression_reports_end_of_input() {
        let err = parse_program("x = (1 +").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.column, 9);
        assert_eq!(err.found, "end of input");
        assert!(err.expected.contains(&"expression".to_string()));
    }

    #[test]
    fn else_on_next_line_and_else_if() {
        let src = "if a { b() }\nelse if c { d() } else { e() }";
        let p = parse_program(src).unwrap();
        assert_eq!(p.statements.len(), 1);
    }

    #[test]
    fn for_range_and_records() {
        let src = "for i in range(0, 3) {\n  fly_to(i, 0, 3)\n}\nt = [{name: \"red\", cell: [0, 1]},\n {name: \"blue\", cell: [1, 1]}]\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.statements.len(), 2);
        assert_eq!(p.call_sites().len(), 1);
    }

    #[test]
    fn positions_are_one_based() {
        let p = parse_program("\n  fly_to(1, 2, 3)").unwrap();
        assert_eq!(p.statements[0].pos, Pos::new(2, 3));
    }

    #[test]
    fn two_statements_on_one_line_need_separator() {
        assert!(parse_program("a() b()").is_err());
        assert!(parse_program("a(); b()").is_ok());
        assert!(parse_program("while x { a() } b()").is_ok());
    }

    #[test]
    fn comments_are_ignored() {
        let p = parse_program("# take off\ntakeoff() // now\n").unwrap();
        assert_eq!(p.statements.len(), 1);
    }
}
