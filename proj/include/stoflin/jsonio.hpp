#pragma once

#include <string>
#include <variant>
#include <vector>

namespace stoflin {

/// Minimal JSON value with insertion-ordered object keys and doubles printed
/// with 17 significant digits, so identical inputs serialize byte-identically.
class Json {
  public:
    Json() : value_(nullptr) {}
    Json(bool b) : value_(b) {}
    Json(double d) : value_(d) {}
    Json(int i) : value_(static_cast<double>(i)) {}
    Json(long long i) : value_(static_cast<double>(i)) {}
    Json(const char* s) : value_(std::string(s)) {}
    Json(std::string s) : value_(std::move(s)) {}

    static Json array();
    static Json object();

    Json& push_back(Json v);
    Json& set(const std::string& key, Json v);

    std::string dump(int indent = 0) const;

  private:
    struct Array {
        std::vector<Json> items;
    };
    struct Object {
        std::vector<std::pair<std::string, Json>> members;
    };
    std::variant<std::nullptr_t, bool, double, std::string, Array, Object> value_;

    void dump_to(std::string& out, int indent, int depth) const;
};

}  // namespace stoflin
