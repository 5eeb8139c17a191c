#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace heparl {

struct LabSpec {
    std::string name;
    std::string unit;
    bool maskable = true;
};

/// Ordered list of laboratory values tracked per observation. The order is
/// fixed and defines the feature-vector layout everywhere downstream.
/// aPTT and anti-Xa are never maskable: an observation exists exactly
/// because both were measured.
class LabCatalog {
public:
    explicit LabCatalog(std::vector<LabSpec> labs);

    const std::vector<LabSpec>& labs() const { return labs_; }
    std::size_t size() const { return labs_.size(); }

    /// Index into the full lab layout; throws ValidationError if unknown.
    std::size_t index_of(const std::string& name) const;
    bool contains(const std::string& name) const;

    /// Indices of maskable labs in catalog order. Missingness indicators
    /// follow this layout.
    const std::vector<std::size_t>& maskable_indices() const { return maskable_; }
    std::size_t n_maskable() const { return maskable_.size(); }

    /// Position of a lab within the maskable layout, or npos.
    std::size_t maskable_position(std::size_t lab_index) const;

    std::size_t aptt_index() const { return aptt_; }
    std::size_t antixa_index() const { return antixa_; }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::vector<LabSpec> labs_;
    std::vector<std::size_t> maskable_;
    std::vector<std::size_t> maskable_pos_;
    std::size_t aptt_ = npos;
    std::size_t antixa_ = npos;
};

/// aPTT, anti-Xa, and the 13 concurrent labs reported with them
/// (PT, INR, TBILI, CR, AST, ALT, PLT, CRP, RDW, HGB, WBC, FBN, ESR).
const LabCatalog& default_catalog();

} // namespace heparl
