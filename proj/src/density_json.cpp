#include "conveq/density_json.hpp"

#include "conveq/error.hpp"

#include <initializer_list>
#include <string>

namespace conveq {

namespace {

using nlohmann::json;

void only_keys(const json& j, std::initializer_list<const char*> keys, const char* where) {
    if (!j.is_object()) throw InvalidInput(std::string(where) + " must be an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* key : keys) ok = ok || k == key;
        if (!ok) throw InvalidInput(std::string("unknown key '") + k + "' in " + where);
    }
}

template <class T>
T need(const json& j, const char* key, const char* where) {
    if (!j.contains(key)) throw InvalidInput(std::string(where) + " needs '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw InvalidInput(std::string("'") + key + "' in " + where + " has the wrong type");
    }
}

RadialProfile profile_from(const json& j) {
    const auto kind = need<std::string>(j, "kind", "profile");
    if (kind == "polynomial") {
        only_keys(j, {"kind", "beta"}, "profile");
        return RadialProfile(Polynomial{need<double>(j, "beta", "profile")});
    }
    if (kind == "tempered") {
        only_keys(j, {"kind", "m", "beta"}, "profile");
        return RadialProfile(TemperedExponential{need<double>(j, "m", "profile"), need<double>(j, "beta", "profile")});
    }
    if (kind == "tabulated") {
        only_keys(j, {"kind", "knots", "values"}, "profile");
        return RadialProfile(Tabulated{need<std::vector<double>>(j, "knots", "profile"),
                                       need<std::vector<double>>(j, "values", "profile")});
    }
    throw InvalidInput("unknown profile kind '" + kind + "'");
}

AngularFactor eta_from(const json& j) {
    const auto kind = need<std::string>(j, "kind", "eta");
    if (kind == "constant") {
        only_keys(j, {"kind", "a"}, "eta");
        return AngularFactor::constant(need<double>(j, "a", "eta"));
    }
    if (kind == "cosine_bump") {
        only_keys(j, {"kind", "a", "b", "axis"}, "eta");
        return AngularFactor(CosineBumpEta{need<double>(j, "a", "eta"), need<double>(j, "b", "eta"),
                                           need<std::vector<double>>(j, "axis", "eta")});
    }
    throw InvalidInput("unknown eta kind '" + kind + "'");
}

} // namespace

DirectionalDensity density_from_json(const json& j) {
    only_keys(j, {"d", "profile", "eta", "value_at_zero"}, "density");
    const int d = need<int>(j, "d", "density");
    auto profile = profile_from(need<json>(j, "profile", "density"));
    auto eta = j.contains("eta") ? eta_from(j.at("eta")) : AngularFactor::constant(1.0);
    if (j.contains("value_at_zero"))
        return {d, std::move(eta), std::move(profile), need<double>(j, "value_at_zero", "density")};
    return {d, std::move(eta), std::move(profile)};
}

json density_to_json(const DirectionalDensity& f) {
    json p = std::visit(
        [](const auto& k) -> json {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, Polynomial>) return {{"kind", "polynomial"}, {"beta", k.beta}};
            else if constexpr (std::is_same_v<K, TemperedExponential>)
                return {{"kind", "tempered"}, {"m", k.m}, {"beta", k.beta}};
            else return {{"kind", "tabulated"}, {"knots", k.knots}, {"values", k.values}};
        },
        f.profile().kind());
    json e = std::visit(
        [](const auto& k) -> json {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, ConstantEta>) return {{"kind", "constant"}, {"a", k.a}};
            else return {{"kind", "cosine_bump"}, {"a", k.a}, {"b", k.b}, {"axis", k.axis}};
        },
        f.eta().kind());
    return {{"d", f.dim()}, {"profile", p}, {"eta", e}, {"value_at_zero", f.value_at_zero()}};
}

} // namespace conveq
