#include "spnet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

namespace spnet {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "SPNET v1 blobs are little-endian; big-endian hosts are not supported");

std::string sha256_hex(const void* data, std::size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int dlen = 0;
    if (EVP_Digest(data, len, digest, &dlen, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest failure");
    }
    static const char* hexd = "0123456789abcdef";
    std::string out(dlen * 2, '0');
    for (unsigned int i = 0; i < dlen; ++i) {
        out[2 * i] = hexd[digest[i] >> 4];
        out[2 * i + 1] = hexd[digest[i] & 0xf];
    }
    return out;
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(buf.data(), buf.size());
}

namespace {

json tensor_entry(const DenseTensor& t, std::size_t& offset, std::ofstream& blob) {
    const std::size_t bytes = t.size() * sizeof(double);
    json e;
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["length"] = bytes;
    e["sha256"] = sha256_hex(t.data(), bytes);
    blob.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
    return e;
}

DenseTensor read_tensor(const json& e, const std::vector<char>& blob, const std::string& path) {
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t length = e.at("length").get<std::size_t>();
    std::vector<std::size_t> shape = e.at("shape").get<std::vector<std::size_t>>();
    if (length != shape_product(shape) * sizeof(double)) {
        throw format_error(path + ": tensor length does not match shape");
    }
    if (offset + length > blob.size()) {
        throw format_error(path + ": tensor range exceeds blob size");
    }
    const std::string digest = sha256_hex(blob.data() + offset, length);
    if (digest != e.at("sha256").get<std::string>()) {
        throw format_error(path + ": tensor sha256 mismatch (corrupt blob)");
    }
    std::vector<double> data(length / sizeof(double));
    std::memcpy(data.data(), blob.data() + offset, length);
    return DenseTensor(std::move(shape), std::move(data));
}

std::string blob_name(const std::string& path) {
    const auto slash = path.find_last_of('/');
    const std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    return base + ".bin";
}

}  // namespace

void save_model(const NetworkModel& model, const std::string& path) {
    validate_model(model);
    const std::string blob_path = path + ".bin";
    std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
    if (!blob) throw io_error("cannot write " + blob_path);

    json manifest;
    manifest["format"] = "spnet-v1";
    manifest["input_shape"] = model.input_shape;
    manifest["blob"] = blob_name(path);
    json layers = json::array();
    std::size_t offset = 0;
    for (const Layer& l : model.layers) {
        json e;
        e["kind"] = layer_kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::dense:
                e["weights"] = tensor_entry(l.weights, offset, blob);
                if (!l.bias.empty()) e["bias"] = tensor_entry(l.bias, offset, blob);
                break;
            case LayerKind::conv:
                e["stride"] = l.stride;
                e["padding"] = l.padding;
                e["weights"] = tensor_entry(l.weights, offset, blob);
                if (!l.bias.empty()) e["bias"] = tensor_entry(l.bias, offset, blob);
                break;
            case LayerKind::maxpool:
            case LayerKind::avgpool:
                e["kernel"] = l.kernel;
                e["stride"] = l.stride;
                break;
            case LayerKind::relu:
            case LayerKind::flatten:
                break;
        }
        layers.push_back(std::move(e));
    }
    manifest["layers"] = std::move(layers);
    blob.close();
    if (!blob) throw io_error("write failure on " + blob_path);

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << manifest.dump(2) << "\n";
    if (!out) throw io_error("write failure on " + path);
}

NetworkModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error(path + ": manifest is not valid JSON: " + e.what());
    }
    if (!manifest.contains("format") || manifest["format"] != "spnet-v1") {
        throw format_error(path + ": missing or unsupported format field (want spnet-v1)");
    }
    const auto slash = path.find_last_of('/');
    const std::string dir = slash == std::string::npos ? std::string() : path.substr(0, slash + 1);
    const std::string blob_path = dir + manifest.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw io_error("cannot open " + blob_path);
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    NetworkModel model;
    try {
        model.input_shape = manifest.at("input_shape").get<std::vector<std::size_t>>();
        for (const json& e : manifest.at("layers")) {
            Layer l;
            l.kind = layer_kind_from_name(e.at("kind").get<std::string>());
            if (e.contains("stride")) l.stride = e["stride"].get<std::size_t>();
            if (e.contains("padding")) l.padding = e["padding"].get<std::size_t>();
            if (e.contains("kernel")) l.kernel = e["kernel"].get<std::size_t>();
            if (e.contains("weights")) l.weights = read_tensor(e["weights"], blob, path);
            if (e.contains("bias")) l.bias = read_tensor(e["bias"], blob, path);
            model.layers.push_back(std::move(l));
        }
    } catch (const json::exception& e) {
        throw format_error(path + ": malformed manifest: " + e.what());
    }
    try {
        validate_model(model);
    } catch (const std::exception& e) {
        throw format_error(path + ": model does not compose: " + e.what());
    }
    return model;
}

}  // namespace spnet
