#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mixforge/tensor.hpp"

namespace mixforge {

// Value of the TOML subset this project reads: strings, integers, floats,
// booleans, and one-dimensional arrays of those.
struct TomlValue {
    enum class Kind { kString, kInt, kFloat, kBool, kArray };
    Kind kind = Kind::kString;
    std::string str;
    std::int64_t integer = 0;
    double real = 0;
    bool boolean = false;
    std::vector<TomlValue> array;

    static TomlValue of(std::string s);
    static TomlValue of(std::int64_t i);
    static TomlValue of(double d);
    static TomlValue of(bool b);

    std::string type_name() const;
};

// Flat table keyed "section.key" ("key" at top level). Typed getters throw
// ConfigError on a missing key or a type mismatch; *_or variants return the
// fallback when the key is absent (but still reject a wrong type).
class TomlTable {
  public:
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const TomlValue* find(const std::string& key) const;
    void set(const std::string& key, TomlValue value);

    std::string get_string(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    double get_float(const std::string& key) const;  // accepts integers
    bool get_bool(const std::string& key) const;
    std::vector<std::int64_t> get_int_array(const std::string& key) const;
    std::vector<double> get_float_array(const std::string& key) const;
    std::vector<std::string> get_string_array(const std::string& key) const;

    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
    double get_float_or(const std::string& key, double fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    std::vector<std::int64_t> get_int_array_or(const std::string& key,
                                               std::vector<std::int64_t> fallback) const;
    std::vector<std::string> get_string_array_or(const std::string& key,
                                                 std::vector<std::string> fallback) const;

    std::vector<std::string> keys() const;

    // Keys actually read through the getters so far; lets config loading
    // reject unknown keys (typo protection).
    std::vector<std::string> unread_keys() const;

    // Round-trippable TOML text, keys grouped back into sections.
    std::string serialize() const;

  private:
    const TomlValue& require(const std::string& key) const;

    std::map<std::string, TomlValue> values_;
    mutable std::map<std::string, bool> read_;
};

// Parses the supported TOML subset: [section] headers, `key = value` pairs,
// "#" comments, basic and literal strings, integers (with underscores),
// floats, booleans, and arrays (which may span lines). `origin` names the
// source in error messages.
TomlTable parse_toml(const std::string& text, const std::string& origin = "<string>");

// parse_toml over a file's contents; IoError when unreadable.
TomlTable parse_toml_file(const std::string& path);

}  // namespace mixforge
