#include "heparl/catalog.hpp"

#include <set>

#include "heparl/errors.hpp"

namespace heparl {

LabCatalog::LabCatalog(std::vector<LabSpec> labs) : labs_(std::move(labs)) {
    std::set<std::string> seen;
    maskable_pos_.assign(labs_.size(), npos);
    for (std::size_t i = 0; i < labs_.size(); ++i) {
        const auto& lab = labs_[i];
        if (!seen.insert(lab.name).second) {
            throw ValidationError("duplicate lab name in catalog: " + lab.name);
        }
        if (lab.name == "aPTT") aptt_ = i;
        if (lab.name == "antiXa") antixa_ = i;
        if (lab.maskable) {
            maskable_pos_[i] = maskable_.size();
            maskable_.push_back(i);
        }
    }
    if (aptt_ == npos || antixa_ == npos) {
        throw ValidationError("catalog must contain aPTT and antiXa");
    }
    if (labs_[aptt_].maskable || labs_[antixa_].maskable) {
        throw ValidationError("aPTT and antiXa must not be maskable");
    }
}

std::size_t LabCatalog::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < labs_.size(); ++i) {
        if (labs_[i].name == name) return i;
    }
    throw ValidationError("lab not in catalog: " + name);
}

bool LabCatalog::contains(const std::string& name) const {
    for (const auto& lab : labs_) {
        if (lab.name == name) return true;
    }
    return false;
}

std::size_t LabCatalog::maskable_position(std::size_t lab_index) const {
    if (lab_index >= labs_.size()) return npos;
    return maskable_pos_[lab_index];
}

const LabCatalog& default_catalog() {
    static const LabCatalog catalog({
        {"aPTT", "s", false},
        {"antiXa", "IU/mL", false},
        {"PT", "s", true},
        {"INR", "ratio", true},
        {"TBILI", "mg/dL", true},
        {"CR", "mg/dL", true},
        {"AST", "U/L", true},
        {"ALT", "U/L", true},
        {"PLT", "1e3/uL", true},
        {"CRP", "mg/L", true},
        {"RDW", "%", true},
        {"HGB", "g/dL", true},
        {"WBC", "1e3/uL", true},
        {"FBN", "mg/dL", true},
        {"ESR", "mm/hr", true},
    });
    return catalog;
}

} // namespace heparl
