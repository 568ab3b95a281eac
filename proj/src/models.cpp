#include "freemcg/models.hpp"

#include "freemcg/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <utility>

namespace freemcg {

namespace {

void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw NumericError(std::string(what) + ": non-finite entries");
}

Vector json_to_vector(const nlohmann::json& arr, int expected, const char* what) {
    if (!arr.is_array() || static_cast<int>(arr.size()) != expected)
        throw IoError(std::string(what) + ": expected array of length " + std::to_string(expected));
    Vector v(expected);
    for (int i = 0; i < expected; ++i) v[i] = arr[i].get<double>();
    return v;
}

Matrix json_to_matrix(const nlohmann::json& arr, int rows, int cols, const char* what) {
    Vector flat = json_to_vector(arr, rows * cols, what);
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];  // row-major
    return m;
}

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}

nlohmann::json vector_to_json(const Vector& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

}  // namespace

Vector softmax(const Vector& logits) {
    if (logits.size() < 1) throw NumericError("softmax: empty logits");
    require_finite(logits, "softmax");
    const double shift = logits.maxCoeff();
    Vector e = (logits.array() - shift).exp();
    return e / e.sum();
}

int predict(const BlackBoxClassifier& m, const Vector& x) {
    if (x.size() != m.dim_in())
        throw NumericError("predict: input has dimension " + std::to_string(x.size()) +
                           ", classifier expects " + std::to_string(m.dim_in()));
    Vector p = softmax(m.eval(x));
    int best = 0;
    for (int c = 1; c < p.size(); ++c)
        if (p[c] > p[best]) best = c;  // strict: ties keep the lowest index
    return best;
}

Vector oracle_log_prob_gradient(const Matrix& jacobian, const Vector& p, int c) {
    if (jacobian.rows() != p.size())
        throw NumericError("oracle_log_prob_gradient: Jacobian rows do not match class count");
    if (c < 0 || c >= p.size())
        throw NumericError("oracle_log_prob_gradient: class index out of range");
    Vector w = -p;
    w[c] += 1.0;
    return jacobian.transpose() * w;
}

LinearSoftmax::LinearSoftmax(Matrix weight, Vector bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.rows() != bias_.size())
        throw NumericError("LinearSoftmax: weight rows must match bias length");
}

Vector LinearSoftmax::eval(const Vector& x) const {
    if (x.size() != weight_.cols()) throw NumericError("LinearSoftmax: dimension mismatch");
    return weight_ * x + bias_;
}

Matrix LinearSoftmax::jacobian(const Vector&) const { return weight_; }

RbfSoftmax::RbfSoftmax(Matrix centers, double bandwidth)
    : centers_(std::move(centers)), bandwidth_(bandwidth) {
    if (!(bandwidth_ > 0.0)) throw NumericError("RbfSoftmax: bandwidth must be positive");
}

Vector RbfSoftmax::eval(const Vector& x) const {
    if (x.size() != centers_.cols()) throw NumericError("RbfSoftmax: dimension mismatch");
    const double inv_h2 = 1.0 / (bandwidth_ * bandwidth_);
    Vector f(centers_.rows());
    for (Eigen::Index c = 0; c < centers_.rows(); ++c)
        f[c] = -(x - centers_.row(c).transpose()).squaredNorm() * inv_h2;
    return f;
}

Matrix RbfSoftmax::jacobian(const Vector& x) const {
    if (x.size() != centers_.cols()) throw NumericError("RbfSoftmax: dimension mismatch");
    const double inv_h2 = 1.0 / (bandwidth_ * bandwidth_);
    Matrix j(centers_.rows(), centers_.cols());
    for (Eigen::Index c = 0; c < centers_.rows(); ++c)
        j.row(c) = -2.0 * inv_h2 * (x - centers_.row(c).transpose()).transpose();
    return j;
}

ScalarToyWrapper::ScalarToyWrapper(int dim_in, Field field, Gradient gradient)
    : dim_in_(dim_in), field_(std::move(field)), gradient_(std::move(gradient)) {}

Vector ScalarToyWrapper::eval(const Vector& x) const {
    if (x.size() != dim_in_) throw NumericError("ScalarToyWrapper: dimension mismatch");
    Vector f(2);
    f << field_(x), 0.0;
    return f;
}

Matrix ScalarToyWrapper::jacobian(const Vector& x) const {
    if (x.size() != dim_in_) throw NumericError("ScalarToyWrapper: dimension mismatch");
    Matrix j = Matrix::Zero(2, dim_in_);
    j.row(0) = gradient_(x).transpose();
    return j;
}

ScalarToyWrapper ScalarToyWrapper::neg_x_plus_y_squared() {
    ScalarToyWrapper toy(
        2, [](const Vector& x) { return -x[0] + x[1] * x[1]; },
        [](const Vector& x) {
            Vector g(2);
            g << -1.0, 2.0 * x[1];
            return g;
        });
    toy.field_name_ = "neg_x_plus_y_squared";
    return toy;
}

std::unique_ptr<OracleClassifier> load_classifier(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open classifier file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed classifier JSON in " + path + ": " + e.what());
    }
    const std::string kind = j.value("kind", "");
    try {
        if (kind == "linear_softmax") {
            const int d = j.at("dim_in").get<int>();
            const int n = j.at("dim_out").get<int>();
            return std::make_unique<LinearSoftmax>(json_to_matrix(j.at("weight"), n, d, "weight"),
                                                   json_to_vector(j.at("bias"), n, "bias"));
        }
        if (kind == "rbf_softmax") {
            const int d = j.at("dim_in").get<int>();
            const int n = j.at("dim_out").get<int>();
            return std::make_unique<RbfSoftmax>(json_to_matrix(j.at("centers"), n, d, "centers"),
                                                j.at("bandwidth").get<double>());
        }
        if (kind == "scalar_toy") {
            const std::string field = j.value("field", "");
            if (field == "neg_x_plus_y_squared")
                return std::make_unique<ScalarToyWrapper>(ScalarToyWrapper::neg_x_plus_y_squared());
            throw IoError("unknown scalar_toy field: '" + field + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad classifier file " + path + ": " + e.what());
    }
    throw IoError("unknown classifier kind: '" + kind + "'");
}

void save_classifier(const OracleClassifier& m, const std::string& path) {
    nlohmann::json j;
    if (const auto* lin = dynamic_cast<const LinearSoftmax*>(&m)) {
        j["kind"] = "linear_softmax";
        j["dim_in"] = lin->dim_in();
        j["dim_out"] = lin->dim_out();
        j["weight"] = matrix_to_json(lin->weight());
        j["bias"] = vector_to_json(lin->bias());
    } else if (const auto* rbf = dynamic_cast<const RbfSoftmax*>(&m)) {
        j["kind"] = "rbf_softmax";
        j["dim_in"] = rbf->dim_in();
        j["dim_out"] = rbf->dim_out();
        j["centers"] = matrix_to_json(rbf->centers());
        j["bandwidth"] = rbf->bandwidth();
    } else if (const auto* toy = dynamic_cast<const ScalarToyWrapper*>(&m)) {
        if (toy->field_name().empty())
            throw IoError("save_classifier: anonymous scalar field is not serializable");
        j["kind"] = "scalar_toy";
        j["dim_in"] = toy->dim_in();
        j["dim_out"] = toy->dim_out();
        j["field"] = toy->field_name();
    } else {
        throw IoError("save_classifier: unsupported classifier type");
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write classifier file: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace freemcg
