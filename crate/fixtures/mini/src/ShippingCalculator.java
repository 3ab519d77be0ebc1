/**
 * Weight-based shipping costs with a free-shipping threshold.
 */
public class ShippingCalculator {
    private double freeThreshold = 50.0;

    /** Flat base cost for any shipment. */
    public double baseCost() {
        return 4.90;
    }

    /** Heavy parcels (above 10 units of weight) pay 0.50 per extra unit. */
    public double weightSurcharge(double weight) {
        if (weight > 100.0) {
            return (weight - 10.0) * 0.50;
        }
        return 0.0;
    }

    /** Subtotals at or above the threshold ship for free. */
    public boolean qualifiesForFree(double subtotal) {
        return subtotal >= freeThreshold;
    }

    public double costFor(double subtotal, double weight) {
        if (qualifiesForFree(subtotal)) {
            return 0.0;
        }
        return baseCost() + weightSurcharge(weight);
    }
}
