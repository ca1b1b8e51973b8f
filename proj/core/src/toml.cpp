#include "mixforge/toml.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mixforge/errors.hpp"

namespace mixforge {

TomlValue TomlValue::of(std::string s) {
    TomlValue v;
    v.kind = Kind::kString;
    v.str = std::move(s);
    return v;
}

TomlValue TomlValue::of(std::int64_t i) {
    TomlValue v;
    v.kind = Kind::kInt;
    v.integer = i;
    return v;
}

TomlValue TomlValue::of(double d) {
    TomlValue v;
    v.kind = Kind::kFloat;
    v.real = d;
    return v;
}

TomlValue TomlValue::of(bool b) {
    TomlValue v;
    v.kind = Kind::kBool;
    v.boolean = b;
    return v;
}

std::string TomlValue::type_name() const {
    switch (kind) {
        case Kind::kString: return "string";
        case Kind::kInt: return "integer";
        case Kind::kFloat: return "float";
        case Kind::kBool: return "boolean";
        case Kind::kArray: return "array";
    }
    return "?";
}

const TomlValue* TomlTable::find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    read_[key] = true;
    return &it->second;
}

void TomlTable::set(const std::string& key, TomlValue value) { values_[key] = std::move(value); }

const TomlValue& TomlTable::require(const std::string& key) const {
    const TomlValue* v = find(key);
    if (!v) throw ConfigError("missing config key '" + key + "'");
    return *v;
}

std::string TomlTable::get_string(const std::string& key) const {
    const TomlValue& v = require(key);
    if (v.kind != TomlValue::Kind::kString)
        throw ConfigError("config key '" + key + "' must be a string, got " + v.type_name());
    return v.str;
}

std::int64_t TomlTable::get_int(const std::string& key) const {
    const TomlValue& v = require(key);
    if (v.kind != TomlValue::Kind::kInt)
        throw ConfigError("config key '" + key + "' must be an integer, got " + v.type_name());
    return v.integer;
}

double TomlTable::get_float(const std::string& key) const {
    const TomlValue& v = require(key);
    if (v.kind == TomlValue::Kind::kFloat) return v.real;
    if (v.kind == TomlValue::Kind::kInt) return static_cast<double>(v.integer);
    throw ConfigError("config key '" + key + "' must be a number, got " + v.type_name());
}

bool TomlTable::get_bool(const std::string& key) const {
    const TomlValue& v = require(key);
    if (v.kind != TomlValue::Kind::kBool)
        throw ConfigError("config key '" + key + "' must be a boolean, got " + v.type_name());
    return v.boolean;
}

std::vector<std::int64_t> TomlTable::get_int_array(const std::string& key) const {
    const TomlValue& v = require(key);
    if (v.kind != TomlValue::Kind::kArray)
        throw ConfigError("config key '" + key + "' must be an array, got " + v.type_name());
    std::vector<std::int64_t> out;
    for (const TomlValue& e : v.array) {
        if (e.kind != TomlValue::Kind::kInt)
            throw ConfigError("config key '" + key + "' must hold integers");
        out.push_back(e.integer);
    }
    return out;
}

std::vector<double> TomlTable::get_float_array(const std::string& key) const {
    const TomlValue& v = require(key);
    if (v.kind != TomlValue::Kind::kArray)
        throw ConfigError("config key '" + key + "' must be an array, got " + v.type_name());
    std::vector<double> out;
    for (const TomlValue& e : v.array) {
        if (e.kind == TomlValue::Kind::kFloat)
            out.push_back(e.real);
        else if (e.kind == TomlValue::Kind::kInt)
            out.push_back(static_cast<double>(e.integer));
        else
            throw ConfigError("config key '" + key + "' must hold numbers");
    }
    return out;
}

std::vector<std::string> TomlTable::get_string_array(const std::string& key) const {
    const TomlValue& v = require(key);
    if (v.kind != TomlValue::Kind::kArray)
        throw ConfigError("config key '" + key + "' must be an array, got " + v.type_name());
    std::vector<std::string> out;
    for (const TomlValue& e : v.array) {
        if (e.kind != TomlValue::Kind::kString)
            throw ConfigError("config key '" + key + "' must hold strings");
        out.push_back(e.str);
    }
    return out;
}

std::string TomlTable::get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}

std::int64_t TomlTable::get_int_or(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double TomlTable::get_float_or(const std::string& key, double fallback) const {
    return has(key) ? get_float(key) : fallback;
}

bool TomlTable::get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

std::vector<std::int64_t> TomlTable::get_int_array_or(const std::string& key,
                                                      std::vector<std::int64_t> fallback) const {
    return has(key) ? get_int_array(key) : fallback;
}

std::vector<std::string> TomlTable::get_string_array_or(const std::string& key,
                                                        std::vector<std::string> fallback) const {
    return has(key) ? get_string_array(key) : fallback;
}

std::vector<std::string> TomlTable::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

std::vector<std::string> TomlTable::unread_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
        if (!read_.count(k)) out.push_back(k);
    return out;
}

namespace {

std::string quote_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    out += '"';
    return out;
}

std::string format_float(double d) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    std::string s = buf;
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

std::string serialize_value(const TomlValue& v) {
    switch (v.kind) {
        case TomlValue::Kind::kString: return quote_string(v.str);
        case TomlValue::Kind::kInt: return std::to_string(v.integer);
        case TomlValue::Kind::kFloat: return format_float(v.real);
        case TomlValue::Kind::kBool: return v.boolean ? "true" : "false";
        case TomlValue::Kind::kArray: {
            std::string out = "[";
            for (std::size_t i = 0; i < v.array.size(); ++i) {
                if (i) out += ", ";
                out += serialize_value(v.array[i]);
            }
            out += "]";
            return out;
        }
    }
    return "";
}

}  // namespace

std::string TomlTable::serialize() const {
    std::ostringstream out;
    // Root keys first, then sections in map order (keys within a section
    // likewise sorted). std::map iteration gives both for free.
    for (const auto& [k, v] : values_)
        if (k.find('.') == std::string::npos) out << k << " = " << serialize_value(v) << "\n";
    std::string current_section;
    for (const auto& [k, v] : values_) {
        const auto dot = k.rfind('.');
        if (dot == std::string::npos) continue;
        const std::string section = k.substr(0, dot);
        if (section != current_section) {
            out << "\n[" << section << "]\n";
            current_section = section;
        }
        out << k.substr(dot + 1) << " = " << serialize_value(v) << "\n";
    }
    return out.str();
}

namespace {

// Cursor over the raw text with line tracking for error messages.
class Scanner {
  public:
    Scanner(const std::string& text, const std::string& origin) : text_(text), origin_(origin) {}

    bool eof() const { return pos_ >= text_.size(); }
    char peek() const { return eof() ? '\0' : text_[pos_]; }
    char get() {
        const char c = text_[pos_++];
        if (c == '\n') ++line_;
        return c;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(origin_ + ":" + std::to_string(line_) + ": " + msg);
    }

    void skip_inline_ws() {
        while (!eof() && (peek() == ' ' || peek() == '\t')) get();
    }

    // Whitespace, newlines and comments — between top-level statements and
    // inside arrays.
    void skip_filler() {
        while (!eof()) {
            const char c = peek();
            if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                get();
            } else if (c == '#') {
                while (!eof() && peek() != '\n') get();
            } else {
                break;
            }
        }
    }

    // After a statement: inline whitespace, optional comment, newline/EOF.
    void expect_end_of_line() {
        skip_inline_ws();
        if (peek() == '#')
            while (!eof() && peek() != '\n') get();
        if (eof()) return;
        if (peek() == '\r') get();
        if (eof()) return;
        if (peek() != '\n') fail("unexpected trailing characters");
        get();
    }

  private:
    const std::string& text_;
    std::string origin_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

bool is_bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

std::string parse_bare_name(Scanner& s, bool allow_dots, const char* what) {
    std::string name;
    while (!s.eof() && (is_bare_key_char(s.peek()) || (allow_dots && s.peek() == '.')))
        name += s.get();
    if (name.empty()) s.fail(std::string("expected ") + what);
    if (allow_dots && (name.front() == '.' || name.back() == '.' ||
                       name.find("..") != std::string::npos))
        s.fail(std::string("malformed ") + what);
    return name;
}

std::string parse_basic_string(Scanner& s) {
    s.get();  // opening quote
    std::string out;
    while (true) {
        if (s.eof()) s.fail("unterminated string");
        char c = s.get();
        if (c == '"') return out;
        if (c == '\n') s.fail("newline in string");
        if (c == '\\') {
            if (s.eof()) s.fail("unterminated escape");
            const char e = s.get();
            switch (e) {
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case 'r': out += '\r'; break;
                default: s.fail(std::string("unsupported escape '\\") + e + "'");
            }
        } else {
            out += c;
        }
    }
}

std::string parse_literal_string(Scanner& s) {
    s.get();  // opening quote
    std::string out;
    while (true) {
        if (s.eof()) s.fail("unterminated string");
        const char c = s.get();
        if (c == '\'') return out;
        if (c == '\n') s.fail("newline in string");
        out += c;
    }
}

TomlValue parse_number(Scanner& s) {
    std::string tok;
    while (!s.eof()) {
        const char c = s.peek();
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' ||
            c == '_')
            tok += s.get();
        else
            break;
    }
    if (tok.empty()) s.fail("expected a value");

    std::string digits;
    for (char c : tok)
        if (c != '_') digits += c;
    if (digits.empty()) s.fail("malformed number '" + tok + "'");

    const bool looks_float = digits.find_first_of(".eE") != std::string::npos;
    errno = 0;
    char* end = nullptr;
    if (!looks_float) {
        const long long v = std::strtoll(digits.c_str(), &end, 10);
        if (errno == ERANGE) s.fail("integer out of range: '" + tok + "'");
        if (end && *end == '\0') return TomlValue::of(static_cast<std::int64_t>(v));
        s.fail("malformed value '" + tok + "'");
    }
    const double d = std::strtod(digits.c_str(), &end);
    if (!end || *end != '\0' || !std::isfinite(d)) s.fail("malformed number '" + tok + "'");
    return TomlValue::of(d);
}

TomlValue parse_value(Scanner& s);

TomlValue parse_array(Scanner& s) {
    s.get();  // '['
    TomlValue v;
    v.kind = TomlValue::Kind::kArray;
    while (true) {
        s.skip_filler();
        if (s.eof()) s.fail("unterminated array");
        if (s.peek() == ']') {
            s.get();
            return v;
        }
        v.array.push_back(parse_value(s));
        s.skip_filler();
        if (s.eof()) s.fail("unterminated array");
        if (s.peek() == ',') {
            s.get();
        } else if (s.peek() != ']') {
            s.fail("expected ',' or ']' in array");
        }
    }
}

TomlValue parse_value(Scanner& s) {
    const char c = s.peek();
    if (c == '"') return TomlValue::of(parse_basic_string(s));
    if (c == '\'') return TomlValue::of(parse_literal_string(s));
    if (c == '[') return parse_array(s);
    if (std::isalpha(static_cast<unsigned char>(c))) {
        const std::string word = parse_bare_name(s, false, "value");
        if (word == "true") return TomlValue::of(true);
        if (word == "false") return TomlValue::of(false);
        s.fail("unsupported value '" + word + "' (quote strings)");
    }
    return parse_number(s);
}

}  // namespace

TomlTable parse_toml(const std::string& text, const std::string& origin) {
    Scanner s(text, origin);
    TomlTable table;
    std::string section;
    while (true) {
        s.skip_filler();
        if (s.eof()) break;
        if (s.peek() == '[') {
            s.get();
            s.skip_inline_ws();
            section = parse_bare_name(s, true, "section name");
            s.skip_inline_ws();
            if (s.peek() != ']') s.fail("expected ']' after section name");
            s.get();
            s.expect_end_of_line();
            continue;
        }
        const std::string key = parse_bare_name(s, false, "key");
        s.skip_inline_ws();
        if (s.peek() != '=') s.fail("expected '=' after key '" + key + "'");
        s.get();
        s.skip_inline_ws();
        TomlValue value = parse_value(s);
        s.expect_end_of_line();
        const std::string full = section.empty() ? key : section + "." + key;
        if (table.has(full)) s.fail("duplicate key '" + full + "'");
        table.set(full, std::move(value));
    }
    return table;
}

TomlTable parse_toml_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str(), path);
}

}  // namespace mixforge
