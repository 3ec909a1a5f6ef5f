#include "morphreg/io.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace morphreg {

namespace fs = std::filesystem;

const char* IoError::category() const {
    switch (kind_) {
        case IoErrorKind::file: return "io";
        case IoErrorKind::header: return "format";
        case IoErrorKind::payload: return "format";
        case IoErrorKind::element_type: return "format";
    }
    return "io";
}

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);   // shortest exact form
    return std::string(buf, res.ptr);
}

std::string format_double_sig9(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    return std::string(buf, res.ptr);
}

struct MhdHeader {
    std::array<int, 3> dims{};
    std::array<double, 3> spacing{};
    std::array<double, 3> origin{};
    std::string element_type;
    int channels = 1;
    std::string data_file;
};

void write_mhd(const fs::path& path, const GridMeta& meta, const std::string& element_type,
               int channels, const void* payload, std::size_t payload_bytes) {
    fs::path raw_path = path;
    raw_path.replace_extension(".raw");

    std::ostringstream h;
    h << "ObjectType = Image\n";
    h << "NDims = 3\n";
    h << "DimSize = " << meta.dims[0] << " " << meta.dims[1] << " " << meta.dims[2] << "\n";
    h << "ElementSpacing = " << format_double(meta.spacing[0]) << " "
      << format_double(meta.spacing[1]) << " " << format_double(meta.spacing[2]) << "\n";
    h << "Offset = " << format_double(meta.origin[0]) << " " << format_double(meta.origin[1])
      << " " << format_double(meta.origin[2]) << "\n";
    h << "ElementType = " << element_type << "\n";
    h << "ElementNumberOfChannels = " << channels << "\n";
    h << "BinaryDataByteOrderMSB = False\n";
    h << "ElementDataFile = " << raw_path.filename().string() << "\n";

    std::ofstream hf(path, std::ios::binary | std::ios::trunc);
    if (!hf) throw IoError(IoErrorKind::file, "cannot write header: " + path.string());
    hf << h.str();
    if (!hf.good()) throw IoError(IoErrorKind::file, "failed writing header: " + path.string());

    std::ofstream rf(raw_path, std::ios::binary | std::ios::trunc);
    if (!rf) throw IoError(IoErrorKind::file, "cannot write payload: " + raw_path.string());
    rf.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
    if (!rf.good()) throw IoError(IoErrorKind::file, "failed writing payload: " + raw_path.string());
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

MhdHeader parse_mhd(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError(IoErrorKind::file, "cannot open header: " + path.string());

    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError(IoErrorKind::header, "malformed header line in " + path.string() + ": " + line);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }

    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw IoError(IoErrorKind::header, "malformed header: missing " + key + " in " + path.string());
        return it->second;
    };

    if (need("ObjectType") != "Image")
        throw IoError(IoErrorKind::header, "malformed header: ObjectType must be Image");
    if (need("NDims") != "3")
        throw IoError(IoErrorKind::header, "malformed header: NDims must be 3");
    if (kv.count("BinaryDataByteOrderMSB") && kv["BinaryDataByteOrderMSB"] != "False")
        throw IoError(IoErrorKind::header, "malformed header: big-endian payloads are not supported");
    if (kv.count("BinaryData") && kv["BinaryData"] != "True")
        throw IoError(IoErrorKind::header, "malformed header: ASCII payloads are not supported");

    MhdHeader hdr;
    {
        std::istringstream ss(need("DimSize"));
        if (!(ss >> hdr.dims[0] >> hdr.dims[1] >> hdr.dims[2]))
            throw IoError(IoErrorKind::header, "malformed header: DimSize needs three integers");
    }
    {
        std::istringstream ss(need("ElementSpacing"));
        if (!(ss >> hdr.spacing[0] >> hdr.spacing[1] >> hdr.spacing[2]))
            throw IoError(IoErrorKind::header, "malformed header: ElementSpacing needs three reals");
    }
    if (kv.count("Offset")) {
        std::istringstream ss(kv["Offset"]);
        if (!(ss >> hdr.origin[0] >> hdr.origin[1] >> hdr.origin[2]))
            throw IoError(IoErrorKind::header, "malformed header: Offset needs three reals");
    }
    hdr.element_type = need("ElementType");
    if (kv.count("ElementNumberOfChannels")) {
        std::istringstream ss(kv["ElementNumberOfChannels"]);
        if (!(ss >> hdr.channels))
            throw IoError(IoErrorKind::header, "malformed header: bad ElementNumberOfChannels");
    }
    hdr.data_file = need("ElementDataFile");
    if (hdr.data_file == "LOCAL" || hdr.data_file == "LIST")
        throw IoError(IoErrorKind::header, "malformed header: only external raw payload files are supported");
    return hdr;
}

std::vector<char> read_payload(const fs::path& header_path, const MhdHeader& hdr,
                               std::size_t expected_bytes) {
    fs::path raw_path = header_path.parent_path() / hdr.data_file;
    std::ifstream rf(raw_path, std::ios::binary);
    if (!rf) throw IoError(IoErrorKind::file, "cannot open payload: " + raw_path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(rf)), std::istreambuf_iterator<char>());
    if (bytes.size() < expected_bytes)
        throw IoError(IoErrorKind::payload,
                      "truncated payload: " + raw_path.string() + " has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(expected_bytes));
    if (bytes.size() > expected_bytes)
        throw IoError(IoErrorKind::payload,
                      "oversized payload: " + raw_path.string() + " has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(expected_bytes));
    return bytes;
}

GridMeta meta_from_header(const MhdHeader& hdr) {
    GridMeta meta{hdr.dims, hdr.spacing, hdr.origin};
    validate(meta);
    return meta;
}

}  // namespace

void write_volume(const Volume& vol, const fs::path& path) {
    write_mhd(path, vol.meta, "MET_FLOAT", 1, vol.values.data(), vol.values.size() * sizeof(float));
}

void write_mask(const MaskVolume& mask, const fs::path& path) {
    write_mhd(path, mask.meta, "MET_UCHAR", 1, mask.labels.data(), mask.labels.size());
}

void write_field(const VectorField& field, const fs::path& path) {
    write_mhd(path, field.meta, "MET_FLOAT", 3, field.data.data(), field.data.size() * sizeof(float));
}

Volume read_volume(const fs::path& path) {
    MhdHeader hdr = parse_mhd(path);
    if (hdr.element_type != "MET_FLOAT")
        throw IoError(IoErrorKind::element_type,
                      "element type mismatch: expected MET_FLOAT volume, got " + hdr.element_type);
    if (hdr.channels != 1)
        throw IoError(IoErrorKind::element_type, "element type mismatch: expected 1 channel, got " +
                                                     std::to_string(hdr.channels));
    GridMeta meta = meta_from_header(hdr);
    auto bytes = read_payload(path, hdr, meta.voxel_count() * sizeof(float));
    Volume vol{meta, std::vector<float>(meta.voxel_count())};
    std::memcpy(vol.values.data(), bytes.data(), bytes.size());
    return vol;
}

MaskVolume read_mask(const fs::path& path) {
    MhdHeader hdr = parse_mhd(path);
    if (hdr.element_type != "MET_UCHAR")
        throw IoError(IoErrorKind::element_type,
                      "element type mismatch: expected MET_UCHAR mask, got " + hdr.element_type);
    if (hdr.channels != 1)
        throw IoError(IoErrorKind::element_type, "element type mismatch: expected 1 channel, got " +
                                                     std::to_string(hdr.channels));
    GridMeta meta = meta_from_header(hdr);
    auto bytes = read_payload(path, hdr, meta.voxel_count());
    MaskVolume mask{meta, std::vector<std::uint8_t>(meta.voxel_count())};
    std::memcpy(mask.labels.data(), bytes.data(), bytes.size());
    return mask;
}

VectorField read_field(const fs::path& path) {
    MhdHeader hdr = parse_mhd(path);
    if (hdr.element_type != "MET_FLOAT")
        throw IoError(IoErrorKind::element_type,
                      "element type mismatch: expected MET_FLOAT field, got " + hdr.element_type);
    if (hdr.channels != 3)
        throw IoError(IoErrorKind::element_type, "element type mismatch: expected 3 channels, got " +
                                                     std::to_string(hdr.channels));
    GridMeta meta = meta_from_header(hdr);
    auto bytes = read_payload(path, hdr, 3 * meta.voxel_count() * sizeof(float));
    VectorField field{meta, std::vector<float>(3 * meta.voxel_count())};
    std::memcpy(field.data.data(), bytes.data(), bytes.size());
    return field;
}

void write_points(const PointSet& pts, const fs::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoErrorKind::file, "cannot write points: " + path.string());
    f << "x_mm,y_mm,z_mm\n";
    for (const auto& p : pts.points)
        f << format_double_sig9(p[0]) << "," << format_double_sig9(p[1]) << ","
          << format_double_sig9(p[2]) << "\n";
    if (!f.good()) throw IoError(IoErrorKind::file, "failed writing points: " + path.string());
}

PointSet read_points(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError(IoErrorKind::file, "cannot open points: " + path.string());
    std::string line;
    if (!std::getline(f, line) || trim(line) != "x_mm,y_mm,z_mm")
        throw IoError(IoErrorKind::header, "malformed points header in " + path.string());
    PointSet out;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty()) continue;
        Point3 p;
        std::size_t pos = 0;
        for (int c = 0; c < 3; ++c) {
            std::size_t comma = (c < 2) ? t.find(',', pos) : t.size();
            if (comma == std::string::npos)
                throw IoError(IoErrorKind::header,
                              "malformed points row " + std::to_string(lineno) + " in " + path.string());
            std::string cell = trim(t.substr(pos, comma - pos));
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), p[c]);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(p[c]))
                throw IoError(IoErrorKind::header,
                              "malformed points row " + std::to_string(lineno) + " in " + path.string());
            pos = comma + 1;
        }
        out.points.push_back(p);
    }
    return out;
}

}  // namespace morphreg
