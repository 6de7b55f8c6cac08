#include "stoflin/jsonio.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace stoflin {

Json Json::array() {
    Json j;
    j.value_ = Array{};
    return j;
}

Json Json::object() {
    Json j;
    j.value_ = Object{};
    return j;
}

Json& Json::push_back(Json v) {
    std::get<Array>(value_).items.push_back(std::move(v));
    return *this;
}

Json& Json::set(const std::string& key, Json v) {
    std::get<Object>(value_).members.emplace_back(key, std::move(v));
    return *this;
}

namespace {
void escape_to(std::string& out, const std::string& s) {
    out += '"';
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
}

void newline_indent(std::string& out, int indent, int depth) {
    if (indent <= 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * depth), ' ');
}
}  // namespace

void Json::dump_to(std::string& out, int indent, int depth) const {
    if (std::holds_alternative<std::nullptr_t>(value_)) {
        out += "null";
    } else if (const bool* b = std::get_if<bool>(&value_)) {
        out += *b ? "true" : "false";
    } else if (const double* d = std::get_if<double>(&value_)) {
        if (!std::isfinite(*d)) {
            out += "null";
        } else {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", *d);
            out += buf;
        }
    } else if (const std::string* s = std::get_if<std::string>(&value_)) {
        escape_to(out, *s);
    } else if (const Array* a = std::get_if<Array>(&value_)) {
        out += '[';
        for (std::size_t i = 0; i < a->items.size(); ++i) {
            if (i) out += indent > 0 ? "," : ",";
            newline_indent(out, indent, depth + 1);
            a->items[i].dump_to(out, indent, depth + 1);
        }
        if (!a->items.empty()) newline_indent(out, indent, depth);
        out += ']';
    } else {
        const Object& o = std::get<Object>(value_);
        out += '{';
        for (std::size_t i = 0; i < o.members.size(); ++i) {
            if (i) out += ",";
            newline_indent(out, indent, depth + 1);
            escape_to(out, o.members[i].first);
            out += indent > 0 ? ": " : ":";
            o.members[i].second.dump_to(out, indent, depth + 1);
        }
        if (!o.members.empty()) newline_indent(out, indent, depth);
        out += '}';
    }
}

std::string Json::dump(int indent) const {
    std::string out;
    dump_to(out, indent, 0);
    return out;
}

}  // namespace stoflin
