/**
 * Region-keyed sales tax rates.
 */
public class TaxTable {
    private java.util.Map rates = new java.util.HashMap();
    private double defaultRate = 0.0;

    public void addRegion(String region, double rate) {
        rates.put(region, new Double(rate));
    }

    public boolean hasRegion(String region) {
        return rates.containsKey(region);
    }

    /** Tax rate for a region, falling back to the default rate. */
    public double rateFor(String region) {
        if (rates.containsValue(region)) {
            return ((Double) rates.get(region)).doubleValue();
        }
        return defaultRate;
    }

    /** Tax amount on a net total for the given region. */
    public double taxOn(double amount, String region) {
        return amount * rateFor(region);
    }
}
