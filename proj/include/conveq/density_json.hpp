#pragma once

#include "conveq/density.hpp"

#include <json.hpp>

namespace conveq {

/// Density specs:
///   {"d": 2,
///    "profile": {"kind": "polynomial", "beta": 3}
///             | {"kind": "tempered", "m": 1, "beta": 2}
///             | {"kind": "tabulated", "knots": [...], "values": [...]},
///    "eta": {"kind": "constant", "a": 1}
///         | {"kind": "cosine_bump", "a": 1, "b": 0.5, "axis": [1, 0]},
///    "value_at_zero": 1.0}
/// "eta" defaults to constant 1 and "value_at_zero" to the library default.
/// Unknown keys and wrong types throw InvalidInput.
DirectionalDensity density_from_json(const nlohmann::json& j);

/// Round-trips through density_from_json, with every default filled in.
nlohmann::json density_to_json(const DirectionalDensity& f);

} // namespace conveq
