#pragma once
// File I/O for volumes, masks, vector fields, and point sets.
//
// Volumes and fields use a MetaImage-compatible pair: a text header (.mhd)
// and a raw little-endian payload (.raw). Headers are canonicalized on
// write; write-then-read reproduces payloads bit-exactly.
// Point sets are UTF-8 CSV with the exact header line `x_mm,y_mm,z_mm`.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "morphreg/grid.hpp"

namespace morphreg {

// Distinct failure categories so callers can report exact causes.
enum class IoErrorKind {
    file,           // cannot open / read / write
    header,         // malformed or unsupported header
    payload,        // truncated or oversized raw payload
    element_type,   // header element type does not match the requested kind
};

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    IoErrorKind kind() const { return kind_; }
    const char* category() const;

private:
    IoErrorKind kind_;
};

// `path` names the .mhd header; the raw payload lives next to it under the
// name recorded in ElementDataFile.
void write_volume(const Volume& vol, const std::filesystem::path& path);
void write_mask(const MaskVolume& mask, const std::filesystem::path& path);
void write_field(const VectorField& field, const std::filesystem::path& path);

Volume read_volume(const std::filesystem::path& path);
MaskVolume read_mask(const std::filesystem::path& path);
VectorField read_field(const std::filesystem::path& path);

void write_points(const PointSet& pts, const std::filesystem::path& path);
PointSet read_points(const std::filesystem::path& path);

}  // namespace morphreg
