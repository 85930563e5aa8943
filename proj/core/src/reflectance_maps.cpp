// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/reflectance_maps.hpp>

#include <mfr/errors.hpp>
#include <mfr/pfm.hpp>
#include <mfr/png_io.hpp>

#include <nlohmann/json.hpp>

#include <fstream>

namespace mfr {

using nlohmann::json;

ReflectanceMaps ReflectanceMaps::zeros(int w, int h, int lobes) {
    ReflectanceMaps maps;
    maps.width = w;
    maps.height = h;
    maps.diffuse = ImageF::zeros(w, h, 3);
    maps.weights.assign(size_t(lobes), ImageF::zeros(w, h, 1));
    maps.valid = Mask::zeros(w, h);
    return maps;
}

ReflectanceTexel ReflectanceMaps::texel(int y, int x) const {
    ReflectanceTexel t = ReflectanceTexel::zeros(lobe_count());
    t.diffuse = diffuse.rgb_at(y, x).cast<double>();
    for (int i = 0; i < lobe_count(); ++i) t.weights[i] = double(weights[size_t(i)].at(y, x));
    return t;
}

void ReflectanceMaps::set_texel(int y, int x, const ReflectanceTexel& t) {
    diffuse.set3(y, x, t.diffuse);
    for (int i = 0; i < lobe_count(); ++i) weights[size_t(i)].at(y, x) = float(t.weights[i]);
}

void ReflectanceMaps::validate() const {
    if (diffuse.width != width || diffuse.height != height || diffuse.channels != 3)
        throw std::invalid_argument("ReflectanceMaps: diffuse map shape mismatch");
    for (const ImageF& w : weights)
        if (w.width != width || w.height != height || w.channels != 1)
            throw std::invalid_argument("ReflectanceMaps: weight map shape mismatch");
    if (valid.width != width || valid.height != height)
        throw std::invalid_argument("ReflectanceMaps: valid mask shape mismatch");
}

void ReflectanceMaps::fill_invalid_with_mean() {
    const size_t n_valid = valid.count();
    if (n_valid == 0) return;

    Rgb dmean = Rgb::Zero();
    std::vector<double> wmean(size_t(lobe_count()), 0.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (!valid.at(y, x)) continue;
            dmean += diffuse.rgb_at(y, x).cast<double>();
            for (int i = 0; i < lobe_count(); ++i) wmean[size_t(i)] += double(weights[size_t(i)].at(y, x));
        }
    dmean /= double(n_valid);
    for (double& w : wmean) w /= double(n_valid);

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (valid.at(y, x)) continue;
            diffuse.set3(y, x, dmean);
            for (int i = 0; i < lobe_count(); ++i) weights[size_t(i)].at(y, x) = float(wmean[size_t(i)]);
        }
}

void ReflectanceMaps::save_dir(const std::filesystem::path& dir) const {
    validate();
    std::filesystem::create_directories(dir);

    json manifest;
    manifest["schema"] = "mfr.maps/1";
    manifest["width"] = width;
    manifest["height"] = height;
    manifest["files"]["diffuse"] = "diffuse.pfm";
    manifest["files"]["valid"] = "valid.png";
    std::vector<std::string> weight_files;
    for (int i = 0; i < lobe_count(); ++i) weight_files.push_back("weight_" + std::to_string(i) + ".pfm");
    manifest["files"]["weights"] = weight_files;

    write_pfm(dir / "diffuse.pfm", diffuse);
    for (int i = 0; i < lobe_count(); ++i) write_pfm(dir / weight_files[size_t(i)], weights[size_t(i)]);
    write_mask_png(dir / "valid.png", valid);

    std::ofstream out(dir / "maps.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw format_error("maps: cannot write manifest in " + dir.string());
}

ReflectanceMaps ReflectanceMaps::load_dir(const std::filesystem::path& dir) {
    std::ifstream in(dir / "maps.json");
    if (!in) throw format_error("maps: missing manifest in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("maps: bad manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("schema", "") != "mfr.maps/1")
        throw format_error("maps: unsupported manifest schema in " + dir.string());

    ReflectanceMaps maps;
    maps.width = manifest.at("width").get<int>();
    maps.height = manifest.at("height").get<int>();
    maps.diffuse = read_pfm(dir / manifest.at("files").at("diffuse").get<std::string>());
    for (const auto& f : manifest.at("files").at("weights"))
        maps.weights.push_back(read_pfm(dir / f.get<std::string>()));
    maps.valid = read_mask_png(dir / manifest.at("files").at("valid").get<std::string>());
    maps.validate();
    return maps;
}

}  // namespace mfr
