#pragma once

// Small arithmetic expression compiler for user-defined plant maps.
// Grammar:  expr := term (('+'|'-') term)*
//           term := unary (('*'|'/') unary)*
//           unary := ('-'|'+') unary | power
//           power := atom ('^' unary)?
//           atom := number | name | name '(' expr ')' | '(' expr ')'
// Variables are x1..xn and u; constants pi and e.

#include "dinv/core.hpp"

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace dinv {

class Expression {
public:
    Expression() = default;

    /// Compiles src for a plant with n_x states.
    static Expression compile(const std::string& src, int n_x) {
        Parser p{src, 0, n_x};
        Expression e;
        e.root_ = p.parse_expr();
        p.skip_ws();
        if (p.pos != src.size()) p.fail("unexpected '" + std::string(1, src[p.pos]) + "'");
        e.source_ = src;
        return e;
    }

    double eval(const Eigen::Ref<const Vector>& x, double u) const {
        if (!root_) throw Error("expression: not compiled");
        return root_->eval(x, u);
    }

    const std::string& source() const noexcept { return source_; }

private:
    enum class Op { Num, Var, Input, Add, Sub, Mul, Div, Pow, Neg, Call };
    enum class Fn { Sin, Cos, Tan, Tanh, Sinh, Cosh, Exp, Log, Sqrt, Abs, Atan };

    struct Node {
        Op op = Op::Num;
        double value = 0.0;
        int index = 0;
        Fn fn = Fn::Sin;
        std::shared_ptr<const Node> a, b;

        double eval(const Eigen::Ref<const Vector>& x, double u) const {
            switch (op) {
                case Op::Num: return value;
                case Op::Var: return x[index];
                case Op::Input: return u;
                case Op::Add: return a->eval(x, u) + b->eval(x, u);
                case Op::Sub: return a->eval(x, u) - b->eval(x, u);
                case Op::Mul: return a->eval(x, u) * b->eval(x, u);
                case Op::Div: return a->eval(x, u) / b->eval(x, u);
                case Op::Pow: return std::pow(a->eval(x, u), b->eval(x, u));
                case Op::Neg: return -a->eval(x, u);
                case Op::Call: return call(fn, a->eval(x, u));
            }
            return 0.0;
        }

        static double call(Fn f, double v) {
            switch (f) {
                case Fn::Sin: return std::sin(v);
                case Fn::Cos: return std::cos(v);
                case Fn::Tan: return std::tan(v);
                case Fn::Tanh: return std::tanh(v);
                case Fn::Sinh: return std::sinh(v);
                case Fn::Cosh: return std::cosh(v);
                case Fn::Exp: return std::exp(v);
                case Fn::Log: return std::log(v);
                case Fn::Sqrt: return std::sqrt(v);
                case Fn::Abs: return std::abs(v);
                case Fn::Atan: return std::atan(v);
            }
            return 0.0;
        }
    };
    using NodePtr = std::shared_ptr<const Node>;

    struct Parser {
        const std::string& s;
        std::size_t pos;
        int n_x;

        [[noreturn]] void fail(const std::string& msg) const {
            throw Error("expression '" + s + "' at " + std::to_string(pos) + ": " + msg);
        }
        void skip_ws() {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        }
        bool accept(char c) {
            skip_ws();
            if (pos < s.size() && s[pos] == c) {
                ++pos;
                return true;
            }
            return false;
        }
        static NodePtr make(Op op, NodePtr a = nullptr, NodePtr b = nullptr) {
            auto n = std::make_shared<Node>();
            n->op = op;
            n->a = std::move(a);
            n->b = std::move(b);
            return n;
        }

        NodePtr parse_expr() {
            NodePtr lhs = parse_term();
            for (;;) {
                if (accept('+')) lhs = make(Op::Add, lhs, parse_term());
                else if (accept('-')) lhs = make(Op::Sub, lhs, parse_term());
                else return lhs;
            }
        }
        NodePtr parse_term() {
            NodePtr lhs = parse_unary();
            for (;;) {
                if (accept('*')) lhs = make(Op::Mul, lhs, parse_unary());
                else if (accept('/')) lhs = make(Op::Div, lhs, parse_unary());
                else return lhs;
            }
        }
        NodePtr parse_unary() {
            if (accept('-')) return make(Op::Neg, parse_unary());
            if (accept('+')) return parse_unary();
            return parse_power();
        }
        NodePtr parse_power() {
            NodePtr base = parse_atom();
            if (accept('^')) return make(Op::Pow, base, parse_unary());
            return base;
        }
        NodePtr parse_atom() {
            skip_ws();
            if (pos >= s.size()) fail("unexpected end of input");
            if (accept('(')) {
                NodePtr inner = parse_expr();
                if (!accept(')')) fail("expected ')'");
                return inner;
            }
            const char c = s[pos];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                const char* begin = s.c_str() + pos;
                char* end = nullptr;
                const double v = std::strtod(begin, &end);
                if (end == begin) fail("bad number");
                pos += static_cast<std::size_t>(end - begin);
                auto n = std::make_shared<Node>();
                n->value = v;
                return n;
            }
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                const std::size_t start = pos;
                while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
                const std::string name = s.substr(start, pos - start);
                if (accept('(')) {
                    auto n = std::make_shared<Node>();
                    n->op = Op::Call;
                    n->fn = function(name);
                    n->a = parse_expr();
                    if (!accept(')')) fail("expected ')' after argument of " + name);
                    return n;
                }
                auto n = std::make_shared<Node>();
                if (name == "u") {
                    n->op = Op::Input;
                } else if (name == "pi") {
                    n->value = 3.14159265358979323846;
                } else if (name == "e") {
                    n->value = 2.71828182845904523536;
                } else if (name.size() > 1 && name[0] == 'x' &&
                           name.find_first_not_of("0123456789", 1) == std::string::npos) {
                    const int idx = std::stoi(name.substr(1));
                    if (idx < 1 || idx > n_x) fail("state index out of range: " + name);
                    n->op = Op::Var;
                    n->index = idx - 1;
                } else {
                    fail("unknown identifier '" + name + "'");
                }
                return n;
            }
            fail("unexpected '" + std::string(1, c) + "'");
        }
        Fn function(const std::string& name) const {
            if (name == "sin") return Fn::Sin;
            if (name == "cos") return Fn::Cos;
            if (name == "tan") return Fn::Tan;
            if (name == "tanh") return Fn::Tanh;
            if (name == "sinh") return Fn::Sinh;
            if (name == "cosh") return Fn::Cosh;
            if (name == "exp") return Fn::Exp;
            if (name == "log") return Fn::Log;
            if (name == "sqrt") return Fn::Sqrt;
            if (name == "abs") return Fn::Abs;
            if (name == "atan") return Fn::Atan;
            fail("unknown function '" + name + "'");
        }
    };

    NodePtr root_;
    std::string source_;
};

}  // namespace dinv
