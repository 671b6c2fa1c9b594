#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "spatreg/frame.hpp"

namespace spatreg {

/// One property column attached to a GeoJSON export.
struct geojson_property {
    std::string name;
    // Exactly one of the two vectors is used; labels wins when non-empty.
    arma::vec values;
    std::vector<std::string> labels;
};

/// FeatureCollection of Point features, one per unit, with the given properties.
inline nlohmann::json geojson_points(const std::vector<std::string>& ids, const arma::mat& xy,
                                     const std::vector<geojson_property>& properties) {
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        nlohmann::json props;
        props["id"] = ids[i];
        for (const auto& prop : properties) {
            if (!prop.labels.empty())
                props[prop.name] = prop.labels[i];
            else
                props[prop.name] = prop.values(i);
        }
        features.push_back({{"type", "Feature"},
                            {"geometry", {{"type", "Point"}, {"coordinates", {xy(i, 0), xy(i, 1)}}}},
                            {"properties", props}});
    }
    return {{"type", "FeatureCollection"}, {"features", features}};
}

/// GeoJSON export of a frame: every column becomes a feature property.
inline nlohmann::json export_geojson(const spatial_frame& frame) {
    std::vector<geojson_property> props;
    for (const auto& name : frame.column_names())
        props.push_back({name, frame.column(name), {}});
    return geojson_points(frame.ids(), frame.locations(), props);
}

} // namespace spatreg
