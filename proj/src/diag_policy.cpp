#include "bet/diag_policy.hpp"

#include <cmath>
#include <charconv>

#include "bet/errors.hpp"

namespace bet {

DiagPolicy DiagPolicy::scaled(double factor) {
    if (!(factor > 0) || !std::isfinite(factor)) {
        throw ConfigError("diagonal scale factor must be positive and finite");
    }
    return {Kind::Scale, factor};
}

std::string DiagPolicy::label() const {
    switch (kind) {
        case Kind::Keep: return "keep";
        case Kind::MaskOut: return "mask_out";
        case Kind::Scale: {
            char buf[64];
            const auto res = std::to_chars(buf, buf + sizeof buf, factor);
            return "scale:" + std::string(buf, res.ptr);
        }
    }
    return "keep";
}

DiagPolicy DiagPolicy::parse(const std::string& label) {
    if (label == "keep") return keep();
    if (label == "mask_out") return mask_out();
    if (label.rfind("scale:", 0) == 0) {
        try {
            std::size_t used = 0;
            const double f = std::stod(label.substr(6), &used);
            if (used == label.size() - 6) return scaled(f);
        } catch (const std::logic_error&) {
        }
    }
    throw ConfigError("unknown diagonal policy '" + label + "' (expected keep, mask_out or scale:<factor>)");
}

}  // namespace bet
