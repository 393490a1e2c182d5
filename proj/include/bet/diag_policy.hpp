#pragma once

#include <string>

namespace bet {

// What happens to the diagonal of the dot-product matrix before softmax.
struct DiagPolicy {
    enum class Kind { Keep, Scale, MaskOut };

    Kind kind = Kind::Keep;
    double factor = 1.0;  // used by Scale only

    static DiagPolicy keep() { return {}; }
    static DiagPolicy scaled(double factor);
    static DiagPolicy mask_out() { return {Kind::MaskOut, 1.0}; }

    // "keep", "mask_out" or "scale:<factor>"
    std::string label() const;
    static DiagPolicy parse(const std::string& label);

    bool operator==(const DiagPolicy&) const = default;
};

}  // namespace bet
