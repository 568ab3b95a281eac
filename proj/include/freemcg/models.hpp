#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>

namespace freemcg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Numerically stabilized softmax (max subtraction). Throws NumericError on
/// non-finite input. Output entries lie in [0,1] and sum to 1.
Vector softmax(const Vector& logits);

/// Evaluation-only classifier: logits f(x) are the only capability consumers
/// may rely on. Implementations are immutable after construction and safe for
/// concurrent read-only use.
class BlackBoxClassifier {
public:
    virtual ~BlackBoxClassifier() = default;
    virtual int dim_in() const = 0;
    virtual int dim_out() const = 0;
    virtual Vector eval(const Vector& x) const = 0;
};

/// Test-only extension exposing the analytic Jacobian d f / d x (n x d).
class OracleClassifier : public BlackBoxClassifier {
public:
    virtual Matrix jacobian(const Vector& x) const = 0;
};

/// argmax of softmax(eval(x)); ties break to the lowest class index.
int predict(const BlackBoxClassifier& m, const Vector& x);

/// J^T (e_c - p): the input-space gradient of log p(y=c|x) given the
/// classifier Jacobian at x. Test oracle only.
Vector oracle_log_prob_gradient(const Matrix& jacobian, const Vector& p, int c);

/// f(x) = W x + b.
class LinearSoftmax final : public OracleClassifier {
public:
    LinearSoftmax(Matrix weight, Vector bias);
    int dim_in() const override { return static_cast<int>(weight_.cols()); }
    int dim_out() const override { return static_cast<int>(weight_.rows()); }
    Vector eval(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;
    const Matrix& weight() const { return weight_; }
    const Vector& bias() const { return bias_; }

private:
    Matrix weight_;  // n x d
    Vector bias_;    // n
};

/// f_c(x) = -||x - mu_c||^2 / h^2, one center per class.
class RbfSoftmax final : public OracleClassifier {
public:
    RbfSoftmax(Matrix centers, double bandwidth);
    int dim_in() const override { return static_cast<int>(centers_.cols()); }
    int dim_out() const override { return static_cast<int>(centers_.rows()); }
    Vector eval(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;
    const Matrix& centers() const { return centers_; }
    double bandwidth() const { return bandwidth_; }

private:
    Matrix centers_;  // n x d
    double bandwidth_;
};

/// Lifts a scalar field f to the 2-class logits [f(x), 0] so the softmax
/// pipeline applies unchanged; a 1-class softmax would be degenerate.
class ScalarToyWrapper final : public OracleClassifier {
public:
    using Field = std::function<double(const Vector&)>;
    using Gradient = std::function<Vector(const Vector&)>;

    ScalarToyWrapper(int dim_in, Field field, Gradient gradient);
    int dim_in() const override { return dim_in_; }
    int dim_out() const override { return 2; }
    Vector eval(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;

    double field(const Vector& x) const { return field_(x); }
    Vector field_gradient(const Vector& x) const { return gradient_(x); }

    /// Nonempty only for the named built-in fields; anonymous wrappers
    /// cannot be serialized.
    const std::string& field_name() const { return field_name_; }

    /// The 2-D field f(x, y) = -x + y^2 with gradient (-1, 2y).
    static ScalarToyWrapper neg_x_plus_y_squared();

private:
    int dim_in_;
    Field field_;
    Gradient gradient_;
    std::string field_name_;
};

/// Loads a classifier from its JSON parameter file (see
/// docs/file_formats.md). All built-in kinds expose analytic Jacobians.
std::unique_ptr<OracleClassifier> load_classifier(const std::string& path);

/// Serializes a built-in classifier to the JSON parameter format.
void save_classifier(const OracleClassifier& m, const std::string& path);

}  // namespace freemcg
