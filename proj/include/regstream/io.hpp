#pragma once

#include <string>
#include <utility>
#include <vector>

#include "regstream/dense.hpp"
#include "regstream/trainer.hpp"

namespace regstream {

// Matrix files: "RSMX" magic, u32 version, u32 rows, u32 cols (all little
// endian), then float32 row-major payload. Paths ending in .csv are written
// as plain CSV instead; the loader sniffs the magic, so it reads both.
void save_matrix(const std::string& path, const MatrixX<double>& matrix);
MatrixX<double> load_matrix(const std::string& path);

// Checkpoints: "RSCP" magic, u32 version, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rows, u32 cols and float64 row-major
// data. Tensor order is preserved.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const MatrixX<double>*>>& tensors);
std::vector<std::pair<std::string, MatrixX<double>>> load_checkpoint(const std::string& path);

void save_model(const std::string& path, Model<double>& model);

// Fills an already shaped model (from init_model over the matching config);
// throws when names or shapes disagree with the file.
void load_model(const std::string& path, Model<double>& model);

// Plain "key = value" text round-trip for the training configuration.
// Unknown keys are rejected; missing keys keep their defaults.
void save_train_config(const std::string& path, const TrainConfig& config);
TrainConfig load_train_config(const std::string& path);

}  // namespace regstream
